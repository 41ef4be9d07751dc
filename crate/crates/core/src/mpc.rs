//! Data-driven tracking MPC with an artificial equilibrium.
//!
//! At each time `t` the controller solves
//!
//! ```text
//! minimize    sum_{k=0}^{L} ||u_k - u_s||_R^2 + ||y_k - y_s||_Q^2
//!             + ||u_s - u_T||_S^2 + ||y_s - y_T||_T^2 + alpha_reg ||alpha||^2
//! subject to  [u_{-n..L}; y_{-n..L}] = [H_{L+n+1}(u); H_{L+n+1}(y)] alpha
//!             u_{-n..-1}, y_{-n..-1} = last n measurements
//!             u_k = u_s, y_k = y_s            for k in [L-n, L]
//!             u_k in U, y_k in Y              for k in [0, L]
//!             u_s in U_s, y_s in Y_s
//! ```
//!
//! and applies `u_0`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::equilibria::{add_offset_cost, BoxSet, TargetSetpoint};
use crate::error::{Error, Result};
use crate::hankel::{min_length_for_order, persistence_of_excitation, DataTrajectory, HankelPair};
use crate::linalg::{self, MinNormSolver};
use crate::qp::{
    solve_qp, KktResiduals, QpProblem, QpSettings, QpStatus, VariableBlock, WarmStart,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Prediction horizon `L`.
    pub horizon: usize,
    /// Upper bound `n` on the system order.
    pub order: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub u_box: BoxSet,
    pub y_box: BoxSet,
    pub u_s_box: BoxSet,
    pub y_s_box: BoxSet,
    pub alpha_reg: f64,
    pub solver: QpSettings,
}

/// The last `n` inputs and outputs, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    u: Vec<DVector<f64>>,
    y: Vec<DVector<f64>>,
}

impl History {
    pub fn new(u: Vec<DVector<f64>>, y: Vec<DVector<f64>>) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::dim(format!(
                "history has {} inputs but {} outputs",
                u.len(),
                y.len()
            )));
        }
        Ok(History { u, y })
    }

    /// `n` copies of the pair `(u, y)`.
    pub fn constant(u: &DVector<f64>, y: &DVector<f64>, n: usize) -> Self {
        History {
            u: vec![u.clone(); n],
            y: vec![y.clone(); n],
        }
    }

    pub fn u(&self) -> &[DVector<f64>] {
        &self.u
    }
    pub fn y(&self) -> &[DVector<f64>] {
        &self.y
    }
    pub fn len(&self) -> usize {
        self.u.len()
    }
    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Appends the newest measurement and drops the oldest.
    pub fn push(&mut self, u: DVector<f64>, y: DVector<f64>) {
        if !self.u.is_empty() {
            self.u.remove(0);
            self.y.remove(0);
        }
        self.u.push(u);
        self.y.push(y);
    }
}

/// Index map of the decision vector `z = (alpha, u_0..u_L, y_0..y_L, u_s, y_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
    pub n_alpha: usize,
}

impl Layout {
    pub fn alpha(&self) -> Range<usize> {
        0..self.n_alpha
    }
    pub fn u_bar(&self, k: usize) -> Range<usize> {
        let s = self.n_alpha + k * self.m;
        s..s + self.m
    }
    pub fn y_bar(&self, k: usize) -> Range<usize> {
        let s = self.n_alpha + (self.horizon + 1) * self.m + k * self.p;
        s..s + self.p
    }
    pub fn u_s(&self) -> Range<usize> {
        let s = self.n_alpha + (self.horizon + 1) * (self.m + self.p);
        s..s + self.m
    }
    pub fn y_s(&self) -> Range<usize> {
        let s = self.u_s().end;
        s..s + self.p
    }
    pub fn len(&self) -> usize {
        self.y_s().end
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Hankel depth `L + n + 1`.
    pub fn depth(&self) -> usize {
        self.horizon + self.n + 1
    }

    fn blocks(&self) -> Vec<VariableBlock> {
        let l1 = self.horizon + 1;
        vec![
            VariableBlock {
                name: "alpha".into(),
                start: 0,
                len: self.n_alpha,
            },
            VariableBlock {
                name: "u_bar".into(),
                start: self.u_bar(0).start,
                len: l1 * self.m,
            },
            VariableBlock {
                name: "y_bar".into(),
                start: self.y_bar(0).start,
                len: l1 * self.p,
            },
            VariableBlock {
                name: "u_s".into(),
                start: self.u_s().start,
                len: self.m,
            },
            VariableBlock {
                name: "y_s".into(),
                start: self.y_s().start,
                len: self.p,
            },
        ]
    }
}

fn seg(z: &DVector<f64>, r: Range<usize>) -> DVector<f64> {
    z.rows(r.start, r.len()).into_owned()
}

/// The QP for one time step plus the constant dropped from its objective.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub qp: QpProblem,
    /// `u_T'S u_T + y_T'T y_T`, so that the full cost is `qp.objective(z) + constant`.
    pub constant: f64,
    pub layout: Layout,
}

impl MpcProblem {
    /// Full regularized cost at `z`.
    pub fn cost(&self, z: &DVector<f64>) -> f64 {
        self.qp.objective(z) + self.constant
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// Predicted inputs for `k = -n..=L`.
    pub u_pred: Vec<DVector<f64>>,
    /// Predicted outputs for `k = -n..=L`.
    pub y_pred: Vec<DVector<f64>>,
    pub u_s: DVector<f64>,
    pub y_s: DVector<f64>,
    pub alpha: DVector<f64>,
    pub z: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_bound: DVector<f64>,
    pub cost_regularized: f64,
    /// Cost without the `alpha_reg ||alpha||^2` term.
    pub cost_unregularized: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
    pub n: usize,
}

impl MpcSolution {
    /// Predicted input at `k = 0`, the one applied to the plant.
    pub fn u_applied(&self) -> &DVector<f64> {
        &self.u_pred[self.n]
    }

    /// Predicted input for `k` in `-n..=L`.
    pub fn u_at(&self, k: isize) -> &DVector<f64> {
        &self.u_pred[(k + self.n as isize) as usize]
    }

    pub fn y_at(&self, k: isize) -> &DVector<f64> {
        &self.y_pred[(k + self.n as isize) as usize]
    }

    /// Predicted outputs for `k = 0..=L`.
    pub fn y_future(&self) -> &[DVector<f64>] {
        &self.y_pred[self.n..]
    }

    pub fn u_future(&self) -> &[DVector<f64>] {
        &self.u_pred[self.n..]
    }
}

pub struct Controller {
    data: DataTrajectory,
    config: MpcConfig,
    layout: Layout,
    hankel: DMatrix<f64>,
    pinv: MinNormSolver,
    p: DMatrix<f64>,
    a: DMatrix<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    target: Option<TargetSetpoint>,
    previous: Option<MpcSolution>,
}

impl std::fmt::Debug for Controller {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Controller")
            .field("layout", &self.layout)
            .field("target", &self.target)
            .finish_non_exhaustive()
    }
}

fn check_square(name: &str, w: &DMatrix<f64>, dim: usize, definite: bool, errs: &mut Vec<String>) {
    if w.shape() != (dim, dim) {
        errs.push(format!(
            "{name} is {}x{}, expected {dim}x{dim}",
            w.nrows(),
            w.ncols()
        ));
        return;
    }
    if !linalg::is_symmetric(w, 1e-12) {
        errs.push(format!("{name} is not symmetric"));
    } else if definite && !linalg::is_positive_definite(w) {
        errs.push(format!("{name} is not positive definite"));
    } else if !definite && !linalg::is_positive_semidefinite(w) {
        errs.push(format!("{name} is not positive semidefinite"));
    }
}

impl Controller {
    /// Checks every precondition of the scheme and caches the Hankel data.
    ///
    /// All violated conditions are reported together.
    pub fn validate(data: DataTrajectory, config: MpcConfig) -> Result<Self> {
        let (m, p) = (data.m(), data.p());
        let (l, n) = (config.horizon, config.order);
        let len = data.len();
        let mut errs = Vec::new();

        if n == 0 {
            errs.push("system order bound n must be at least 1".into());
        }
        if l < 2 * n {
            errs.push(format!("L ≥ 2n violated: L = {l} < 2n = {}", 2 * n));
        }
        let order = l + 2 * n + 1;
        let needed = min_length_for_order(m, order);
        if len < needed {
            errs.push(format!(
                "data length bound N ≥ (m+1)(L+2n+1)-1 violated: {len} < {needed}"
            ));
        } else {
            let pe = persistence_of_excitation(data.u(), order)?;
            if !pe.is_exciting() {
                errs.push(format!(
                    "input is not persistently exciting of order L+2n+1 = {order}: rank {} < {}",
                    pe.rank, pe.required
                ));
            }
        }
        check_square("Q", &config.q, p, true, &mut errs);
        check_square("R", &config.r, m, true, &mut errs);
        check_square("S", &config.s, m, false, &mut errs);
        check_square("T", &config.t, p, true, &mut errs);
        if !(config.alpha_reg >= 0.0 && config.alpha_reg.is_finite()) {
            errs.push(format!(
                "alpha_reg must be nonnegative, got {}",
                config.alpha_reg
            ));
        }
        for (name, b, dim) in [
            ("U", &config.u_box, m),
            ("Y", &config.y_box, p),
            ("U_s", &config.u_s_box, m),
            ("Y_s", &config.y_s_box, p),
        ] {
            if b.dim() != dim {
                errs.push(format!("{name} has dimension {}, expected {dim}", b.dim()));
            }
        }
        if config.u_s_box.dim() == m
            && config.u_box.dim() == m
            && !config.u_s_box.is_subset_of(&config.u_box)
        {
            errs.push("U_s is not contained in U".into());
        }
        if config.y_s_box.dim() == p
            && config.y_box.dim() == p
            && !config.y_s_box.is_subset_of(&config.y_box)
        {
            errs.push("Y_s is not contained in Y".into());
        }
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }

        let layout = Layout {
            n,
            m,
            p,
            horizon: l,
            n_alpha: len - l - n,
        };
        let pair = HankelPair::new(&data, layout.depth())?;
        let hankel = pair.stacked();
        let pinv = MinNormSolver::new(&hankel);
        let (p_mat, a, lower, upper) = assemble(&layout, &hankel, &config);
        Ok(Controller {
            data,
            config,
            layout,
            hankel,
            pinv,
            p: p_mat,
            a,
            lower,
            upper,
            target: None,
            previous: None,
        })
    }

    pub fn data(&self) -> &DataTrajectory {
        &self.data
    }
    pub fn config(&self) -> &MpcConfig {
        &self.config
    }
    pub fn layout(&self) -> Layout {
        self.layout
    }
    /// Stacked `[H_{L+n+1}(u); H_{L+n+1}(y)]`.
    pub fn hankel(&self) -> &DMatrix<f64> {
        &self.hankel
    }
    pub fn target(&self) -> Option<&TargetSetpoint> {
        self.target.as_ref()
    }
    pub fn previous(&self) -> Option<&MpcSolution> {
        self.previous.as_ref()
    }

    /// Replaces the setpoint. The warm start is kept.
    pub fn set_target(&mut self, target: TargetSetpoint) -> Result<()> {
        target.check(self.layout.m, self.layout.p)?;
        target.u_or_zero(self.layout.m, &self.config.s)?;
        self.target = Some(target);
        Ok(())
    }

    /// Forgets the previous solution, so the next solve starts cold.
    pub fn reset_warm_start(&mut self) {
        self.previous = None;
    }

    fn check_history(&self, hist: &History) -> Result<()> {
        let Layout { n, m, p, .. } = self.layout;
        if hist.len() != n {
            return Err(Error::dim(format!(
                "history has {} entries, expected n = {n}",
                hist.len()
            )));
        }
        if hist.u.iter().any(|u| u.len() != m) || hist.y.iter().any(|y| y.len() != p) {
            return Err(Error::dim(
                "history vectors do not match the data dimensions",
            ));
        }
        Ok(())
    }

    pub fn build_problem(&self, hist: &History, target: &TargetSetpoint) -> Result<MpcProblem> {
        self.check_history(hist)?;
        let ly = self.layout;
        let (n, m, p) = (ly.n, ly.m, ly.p);
        target.check(m, p)?;
        let u_t = target.u_or_zero(m, &self.config.s)?;

        let mut b = DVector::zeros(self.a.nrows());
        let depth = ly.depth();
        for j in 0..n {
            b.rows_mut(j * m, m).copy_from(&hist.u[j]);
            b.rows_mut(depth * m + j * p, p).copy_from(&hist.y[j]);
        }
        let mut scratch = DMatrix::zeros(ly.len(), ly.len());
        let mut q = DVector::zeros(ly.len());
        let c_u = add_offset_cost(&mut scratch, &mut q, ly.u_s().start, &self.config.s, &u_t);
        let c_y = add_offset_cost(
            &mut scratch,
            &mut q,
            ly.y_s().start,
            &self.config.t,
            &target.y,
        );
        let qp = QpProblem::new(
            self.p.clone(),
            q,
            self.a.clone(),
            b,
            self.lower.clone(),
            self.upper.clone(),
        )?
        .with_blocks(ly.blocks());
        Ok(MpcProblem {
            qp,
            constant: c_u + c_y,
            layout: ly,
        })
    }

    fn decode(&self, prob: &MpcProblem, sol: crate::qp::QpSolution) -> MpcSolution {
        let ly = self.layout;
        let alpha = seg(&sol.z, ly.alpha());
        let window = &self.hankel * &alpha;
        let depth = ly.depth();
        let mut u_pred: Vec<DVector<f64>> = (0..depth)
            .map(|j| window.rows(j * ly.m, ly.m).into_owned())
            .collect();
        let mut y_pred: Vec<DVector<f64>> = (0..depth)
            .map(|j| window.rows(depth * ly.m + j * ly.p, ly.p).into_owned())
            .collect();
        // Future values come from the explicit variables, which carry the bound guarantees.
        for k in 0..=ly.horizon {
            u_pred[ly.n + k] = seg(&sol.z, ly.u_bar(k));
            y_pred[ly.n + k] = seg(&sol.z, ly.y_bar(k));
        }
        let cost_regularized = prob.cost(&sol.z);
        let cost_unregularized = cost_regularized - self.config.alpha_reg * alpha.norm_squared();
        MpcSolution {
            u_pred,
            y_pred,
            u_s: seg(&sol.z, ly.u_s()),
            y_s: seg(&sol.z, ly.y_s()),
            alpha,
            cost_regularized,
            cost_unregularized,
            status: sol.status,
            iterations: sol.iterations,
            residuals: sol.residuals,
            n: ly.n,
            z: sol.z,
            y_eq: sol.y_eq,
            y_bound: sol.y_bound,
        }
    }

    /// Solves one instance without touching controller state.
    pub fn solve_with(
        &self,
        hist: &History,
        target: &TargetSetpoint,
        warm: Option<&WarmStart>,
    ) -> Result<MpcSolution> {
        let prob = self.build_problem(hist, target)?;
        let sol = solve_qp(&prob.qp, &self.config.solver, warm).into_result()?;
        Ok(self.decode(&prob, sol))
    }

    /// One receding-horizon step: solve, remember the solution for the next warm start,
    /// and return the input to apply.
    pub fn solve_step(&mut self, hist: &History) -> Result<(DVector<f64>, MpcSolution)> {
        let target = self
            .target
            .clone()
            .ok_or_else(|| Error::InvalidArgument("no target setpoint set".into()))?;
        self.check_history(hist)?;
        let warm = match (&self.previous, hist.u.last(), hist.y.last()) {
            (Some(prev), Some(u), Some(y)) => Some(self.shift_candidate(prev, u, y)),
            _ => None,
        };
        let sol = self.solve_with(hist, &target, warm.as_ref())?;
        let u = sol.u_applied().clone();
        self.previous = Some(sol.clone());
        Ok((u, sol))
    }

    /// Shifted previous solution with `(u_s, y_s)` appended, given the newest measured pair.
    /// Used only as a warm start.
    pub fn shift_candidate(
        &self,
        prev: &MpcSolution,
        u_meas: &DVector<f64>,
        y_meas: &DVector<f64>,
    ) -> WarmStart {
        let ly = self.layout;
        let (n, l) = (ly.n, ly.horizon);
        let depth = ly.depth();
        if prev.u_pred.len() != depth || u_meas.len() != ly.m || y_meas.len() != ly.p {
            return WarmStart::primal(DVector::zeros(ly.len()));
        }
        let mut u_win: Vec<DVector<f64>> = prev.u_pred[1..].to_vec();
        let mut y_win: Vec<DVector<f64>> = prev.y_pred[1..].to_vec();
        u_win[n - 1] = u_meas.clone();
        y_win[n - 1] = y_meas.clone();
        u_win.push(prev.u_s.clone());
        y_win.push(prev.y_s.clone());

        let rhs = linalg::stack(&[linalg::stack(&u_win), linalg::stack(&y_win)]);
        let alpha = self.pinv.solve(&rhs);

        let mut z = DVector::zeros(ly.len());
        z.rows_mut(0, ly.n_alpha).copy_from(&alpha);
        for k in 0..=l {
            z.rows_mut(ly.u_bar(k).start, ly.m).copy_from(&u_win[n + k]);
            z.rows_mut(ly.y_bar(k).start, ly.p).copy_from(&y_win[n + k]);
        }
        z.rows_mut(ly.u_s().start, ly.m).copy_from(&prev.u_s);
        z.rows_mut(ly.y_s().start, ly.p).copy_from(&prev.y_s);
        WarmStart {
            z,
            y_eq: Some(prev.y_eq.clone()),
            y_bound: Some(prev.y_bound.clone()),
        }
    }

    /// Largest constraint violation of the shifted candidate in the problem for `hist`.
    pub fn candidate_violation(&self, prev: &MpcSolution, hist: &History) -> Result<f64> {
        let target = self
            .target
            .clone()
            .unwrap_or_else(|| TargetSetpoint::new(prev.u_s.clone(), prev.y_s.clone()));
        let prob = self.build_problem(hist, &target)?;
        let (u, y) = (hist.u.last(), hist.y.last());
        let (Some(u), Some(y)) = (u, y) else {
            return Err(Error::dim("empty history"));
        };
        let cand = self.shift_candidate(prev, u, y);
        Ok(prob.qp.constraint_violation(&cand.z))
    }
}

/// Target-independent parts of the QP: `P`, `A` and the bounds.
fn assemble(
    ly: &Layout,
    hankel: &DMatrix<f64>,
    cfg: &MpcConfig,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let (n, m, p, l) = (ly.n, ly.m, ly.p, ly.horizon);
    let depth = ly.depth();
    let nz = ly.len();
    let na = ly.n_alpha;

    let hank_rows = depth * (m + p);
    let term_rows = (n + 1) * (m + p);
    let mut a = DMatrix::zeros(hank_rows + term_rows, nz);
    a.view_mut((0, 0), (hank_rows, na)).copy_from(hankel);
    for k in 0..=l {
        let j = n + k;
        for i in 0..m {
            a[(j * m + i, ly.u_bar(k).start + i)] = -1.0;
        }
        for i in 0..p {
            a[(depth * m + j * p + i, ly.y_bar(k).start + i)] = -1.0;
        }
    }
    let mut row = hank_rows;
    for k in (l - n)..=l {
        for i in 0..m {
            a[(row, ly.u_bar(k).start + i)] = 1.0;
            a[(row, ly.u_s().start + i)] = -1.0;
            row += 1;
        }
        for i in 0..p {
            a[(row, ly.y_bar(k).start + i)] = 1.0;
            a[(row, ly.y_s().start + i)] = -1.0;
            row += 1;
        }
    }

    let mut pm = DMatrix::zeros(nz, nz);
    for i in 0..na {
        pm[(i, i)] = 2.0 * cfg.alpha_reg;
    }
    let (us, ys) = (ly.u_s().start, ly.y_s().start);
    for k in 0..=l {
        add_tracking_pair(&mut pm, ly.u_bar(k).start, us, &cfg.r);
        add_tracking_pair(&mut pm, ly.y_bar(k).start, ys, &cfg.q);
    }
    {
        let mut blk = pm.view_mut((us, us), (m, m));
        blk += &(&cfg.s * 2.0);
    }
    {
        let mut blk = pm.view_mut((ys, ys), (p, p));
        blk += &(&cfg.t * 2.0);
    }

    let mut lower = DVector::from_element(nz, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(nz, f64::INFINITY);
    for k in 0..=l {
        lower
            .rows_mut(ly.u_bar(k).start, m)
            .copy_from(cfg.u_box.lower());
        upper
            .rows_mut(ly.u_bar(k).start, m)
            .copy_from(cfg.u_box.upper());
        lower
            .rows_mut(ly.y_bar(k).start, p)
            .copy_from(cfg.y_box.lower());
        upper
            .rows_mut(ly.y_bar(k).start, p)
            .copy_from(cfg.y_box.upper());
    }
    lower.rows_mut(us, m).copy_from(cfg.u_s_box.lower());
    upper.rows_mut(us, m).copy_from(cfg.u_s_box.upper());
    lower.rows_mut(ys, p).copy_from(cfg.y_s_box.lower());
    upper.rows_mut(ys, p).copy_from(cfg.y_s_box.upper());
    (pm, a, lower, upper)
}

/// Hessian of `||v - w||_W^2` with `v` at `iv`, `w` at `iw`, in the `1/2 z'Pz` convention.
fn add_tracking_pair(pm: &mut DMatrix<f64>, iv: usize, iw: usize, w: &DMatrix<f64>) {
    let d = w.nrows();
    let w2 = w * 2.0;
    {
        let mut blk = pm.view_mut((iv, iv), (d, d));
        blk += &w2;
    }
    {
        let mut blk = pm.view_mut((iw, iw), (d, d));
        blk += &w2;
    }
    {
        let mut blk = pm.view_mut((iv, iw), (d, d));
        blk -= &w2;
    }
    {
        let mut blk = pm.view_mut((iw, iv), (d, d));
        blk -= &w2;
    }
}
