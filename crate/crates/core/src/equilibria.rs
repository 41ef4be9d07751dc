//! Input-output equilibria from data, and the optimal reachable equilibrium
//!
//! ```text
//! minimize    ||u_s - u_T||_S^2 + ||y_s - y_T||_T^2
//! subject to  [H_{n+1}(u); H_{n+1}(y)] alpha = [u_s; ..; u_s; y_s; ..; y_s]
//!             u_s in U_s,  y_s in Y_s
//! ```
//!
//! A model-based counterpart constrained by `(I - A) x_s = B u_s` serves as an oracle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hankel::{persistence_of_excitation, trajectory_membership, DataTrajectory, HankelPair};
use crate::linalg;
use crate::lti::{SystemRealization, Trajectory};
use crate::qp::{solve_qp, KktResiduals, QpProblem, QpSettings, QpStatus, VariableBlock};

/// Membership residual below which a constant window counts as an equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-6;

/// Largest ridge weight on `alpha` accepted by [`optimal_reachable_equilibrium`].
pub const MAX_EQUILIBRIUM_RIDGE: f64 = 1e-8;

/// Axis-aligned box `{v : lower <= v <= upper}`; infinite bounds allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for i in 0..lower.len() {
            let (l, u) = (lower[i], upper[i]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "empty box interval in coordinate {i}: [{l}, {u}]"
                )));
            }
        }
        Ok(BoxSet { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        BoxSet {
            lower: DVector::from_element(dim, f64::NEG_INFINITY),
            upper: DVector::from_element(dim, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }
    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    /// The box `factor * self`, scaled about the origin.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        BoxSet::new(&self.lower * factor, &self.upper * factor)
    }

    /// Largest amount by which `v` leaves the box (0 inside).
    pub fn violation(&self, v: &DVector<f64>) -> f64 {
        (0..v.len())
            .map(|i| (self.lower[i] - v[i]).max(v[i] - self.upper[i]).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        v.len() == self.dim() && self.violation(v) <= tol
    }

    /// Elementwise inclusion `self ⊆ other`.
    pub fn is_subset_of(&self, other: &BoxSet) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| self.lower[i] >= other.lower[i] && self.upper[i] <= other.upper[i])
    }
}

/// Setpoint to track; need not be reachable or an equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSetpoint {
    /// May be omitted when the input weight `S` is zero.
    pub u: Option<DVector<f64>>,
    pub y: DVector<f64>,
}

impl TargetSetpoint {
    pub fn output(y: DVector<f64>) -> Self {
        TargetSetpoint { u: None, y }
    }

    pub fn new(u: DVector<f64>, y: DVector<f64>) -> Self {
        TargetSetpoint { u: Some(u), y }
    }

    pub(crate) fn check(&self, m: usize, p: usize) -> Result<()> {
        if self.y.len() != p {
            return Err(Error::dim(format!(
                "target output has dimension {}, expected {p}",
                self.y.len()
            )));
        }
        if let Some(u) = &self.u {
            if u.len() != m {
                return Err(Error::dim(format!(
                    "target input has dimension {}, expected {m}",
                    u.len()
                )));
            }
        }
        Ok(())
    }

    /// Target input, substituting zero when absent. Only valid when `S = 0`.
    pub(crate) fn u_or_zero(&self, m: usize, s: &DMatrix<f64>) -> Result<DVector<f64>> {
        match &self.u {
            Some(u) => Ok(u.clone()),
            None if s.iter().all(|v| *v == 0.0) => Ok(DVector::zeros(m)),
            None => Err(Error::InvalidArgument(
                "target input is required when the input weight S is nonzero".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub u_s: DVector<f64>,
    pub y_s: DVector<f64>,
    /// Hankel coefficients; empty for the model-based solution.
    pub alpha: DVector<f64>,
    /// Steady state; present only for the model-based solution.
    pub x_s: Option<DVector<f64>>,
    /// Setpoint-offset cost, excluding any ridge term.
    pub cost: f64,
    pub iterations: usize,
    pub residuals: KktResiduals,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumOptions {
    /// Ridge weight on `||alpha||^2`; zero by default.
    pub ridge: f64,
    pub solver: QpSettings,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            ridge: 0.0,
            solver: QpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumCheck {
    pub is_equilibrium: bool,
    pub residual: f64,
}

/// Tests whether the constant window `(u_s, y_s)` of length `n + 1` is a trajectory of the
/// data-generating system.
pub fn is_equilibrium(
    data: &DataTrajectory,
    u_s: &DVector<f64>,
    y_s: &DVector<f64>,
    n: usize,
) -> Result<EquilibriumCheck> {
    let window = Trajectory::new(vec![u_s.clone(); n + 1], vec![y_s.clone(); n + 1])?;
    let mem = trajectory_membership(data, &window, n)?;
    Ok(EquilibriumCheck {
        is_equilibrium: mem.residual <= EQUILIBRIUM_TOL,
        residual: mem.residual,
    })
}

fn check_weights(s: &DMatrix<f64>, t: &DMatrix<f64>, m: usize, p: usize) -> Result<()> {
    if s.shape() != (m, m) || t.shape() != (p, p) {
        return Err(Error::dim(format!(
            "weights are {:?} and {:?}, expected ({m}, {m}) and ({p}, {p})",
            s.shape(),
            t.shape()
        )));
    }
    if !linalg::is_symmetric(s, 1e-12) || !linalg::is_positive_semidefinite(s) {
        return Err(Error::InvalidArgument(
            "S must be symmetric positive semidefinite".into(),
        ));
    }
    if !linalg::is_symmetric(t, 1e-12) || !linalg::is_positive_definite(t) {
        return Err(Error::InvalidArgument(
            "T must be symmetric positive definite".into(),
        ));
    }
    Ok(())
}

fn check_boxes(u_box: &BoxSet, y_box: &BoxSet, m: usize, p: usize) -> Result<()> {
    if u_box.dim() != m || y_box.dim() != p {
        return Err(Error::dim(format!(
            "boxes have dimensions {} and {}, expected {m} and {p}",
            u_box.dim(),
            y_box.dim()
        )));
    }
    Ok(())
}

/// Adds `||v - target||_W^2` on the block starting at `start` to `(P, q)` in the
/// `1/2 z'Pz + q'z` convention and returns the constant term.
pub(crate) fn add_offset_cost(
    p: &mut DMatrix<f64>,
    q: &mut DVector<f64>,
    start: usize,
    w: &DMatrix<f64>,
    target: &DVector<f64>,
) -> f64 {
    let d = w.nrows();
    let mut block = p.view_mut((start, start), (d, d));
    block += w * 2.0;
    let wt = w * target;
    let mut qb = q.rows_mut(start, d);
    qb -= &wt * 2.0;
    target.dot(&wt)
}

/// Solves the optimal reachable equilibrium problem from data alone.
#[allow(clippy::too_many_arguments)]
pub fn optimal_reachable_equilibrium(
    data: &DataTrajectory,
    target: &TargetSetpoint,
    s: &DMatrix<f64>,
    t: &DMatrix<f64>,
    u_box: &BoxSet,
    y_box: &BoxSet,
    n: usize,
    opts: &EquilibriumOptions,
) -> Result<EquilibriumSolution> {
    let (m, p) = (data.m(), data.p());
    target.check(m, p)?;
    check_weights(s, t, m, p)?;
    check_boxes(u_box, y_box, m, p)?;
    if !(0.0..=MAX_EQUILIBRIUM_RIDGE).contains(&opts.ridge) {
        return Err(Error::InvalidArgument(format!(
            "equilibrium ridge weight must lie in [0, {MAX_EQUILIBRIUM_RIDGE}], got {}",
            opts.ridge
        )));
    }
    let order = 2 * n + 1;
    if order > data.len() {
        return Err(Error::NotPersistentlyExciting {
            order,
            rank: 0,
            required: m * order,
            structural: true,
        });
    }
    let pe = persistence_of_excitation(data.u(), order)?;
    if !pe.is_exciting() {
        return Err(Error::NotPersistentlyExciting {
            order,
            rank: pe.rank,
            required: pe.required,
            structural: pe.structurally_impossible,
        });
    }
    let u_t = target.u_or_zero(m, s)?;

    let depth = n + 1;
    let pair = HankelPair::new(data, depth)?;
    let h = pair.stacked();
    let na = pair.ncols();
    let (ius, iys) = (na, na + m);
    let nz = na + m + p;
    let rows = depth * (m + p);

    let mut a = DMatrix::zeros(rows, nz);
    a.view_mut((0, 0), (rows, na)).copy_from(&h);
    for k in 0..depth {
        for i in 0..m {
            a[(k * m + i, ius + i)] = -1.0;
        }
        for i in 0..p {
            a[(depth * m + k * p + i, iys + i)] = -1.0;
        }
    }
    let b = DVector::zeros(rows);

    let mut pm = DMatrix::zeros(nz, nz);
    let mut q = DVector::zeros(nz);
    for i in 0..na {
        pm[(i, i)] = 2.0 * opts.ridge;
    }
    let c_u = add_offset_cost(&mut pm, &mut q, ius, s, &u_t);
    let c_y = add_offset_cost(&mut pm, &mut q, iys, t, &target.y);

    let mut lower = DVector::from_element(nz, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(nz, f64::INFINITY);
    lower.rows_mut(ius, m).copy_from(u_box.lower());
    upper.rows_mut(ius, m).copy_from(u_box.upper());
    lower.rows_mut(iys, p).copy_from(y_box.lower());
    upper.rows_mut(iys, p).copy_from(y_box.upper());

    let prob = QpProblem::new(pm, q, a, b, lower, upper)?.with_blocks(vec![
        VariableBlock {
            name: "alpha".into(),
            start: 0,
            len: na,
        },
        VariableBlock {
            name: "u_s".into(),
            start: ius,
            len: m,
        },
        VariableBlock {
            name: "y_s".into(),
            start: iys,
            len: p,
        },
    ]);
    let sol = solve_qp(&prob, &opts.solver, None).into_result()?;
    let alpha = sol.z.rows(0, na).into_owned();
    let u_s = sol.z.rows(ius, m).into_owned();
    let y_s = sol.z.rows(iys, p).into_owned();
    let ridge_part = opts.ridge * alpha.norm_squared();
    Ok(EquilibriumSolution {
        cost: (sol.objective + c_u + c_y - ridge_part).max(0.0),
        u_s,
        y_s,
        alpha,
        x_s: None,
        iterations: sol.iterations,
        residuals: sol.residuals,
    })
}

/// Same objective as [`optimal_reachable_equilibrium`] with the steady-state equations of a
/// known realization in place of the Hankel constraint.
pub fn model_based_optimal_equilibrium(
    sys: &SystemRealization,
    target: &TargetSetpoint,
    s: &DMatrix<f64>,
    t: &DMatrix<f64>,
    u_box: &BoxSet,
    y_box: &BoxSet,
    settings: &QpSettings,
) -> Result<EquilibriumSolution> {
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    target.check(m, p)?;
    check_weights(s, t, m, p)?;
    check_boxes(u_box, y_box, m, p)?;
    sys.dc_gain()?;
    let u_t = target.u_or_zero(m, s)?;

    // z = (u_s, x_s, y_s)
    let (ix, iy) = (m, m + n);
    let nz = m + n + p;
    let mut a = DMatrix::zeros(n + p, nz);
    a.view_mut((0, 0), (n, m)).copy_from(&(-sys.b()));
    a.view_mut((0, ix), (n, n))
        .copy_from(&(DMatrix::identity(n, n) - sys.a()));
    a.view_mut((n, 0), (p, m)).copy_from(&(-sys.d()));
    a.view_mut((n, ix), (p, n)).copy_from(&(-sys.c()));
    a.view_mut((n, iy), (p, p)).fill_with_identity();
    let b = DVector::zeros(n + p);

    let mut pm = DMatrix::zeros(nz, nz);
    let mut q = DVector::zeros(nz);
    let c_u = add_offset_cost(&mut pm, &mut q, 0, s, &u_t);
    let c_y = add_offset_cost(&mut pm, &mut q, iy, t, &target.y);

    let mut lower = DVector::from_element(nz, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(nz, f64::INFINITY);
    lower.rows_mut(0, m).copy_from(u_box.lower());
    upper.rows_mut(0, m).copy_from(u_box.upper());
    lower.rows_mut(iy, p).copy_from(y_box.lower());
    upper.rows_mut(iy, p).copy_from(y_box.upper());

    let prob = QpProblem::new(pm, q, a, b, lower, upper)?;
    let sol = solve_qp(&prob, settings, None).into_result()?;
    Ok(EquilibriumSolution {
        cost: (sol.objective + c_u + c_y).max(0.0),
        u_s: sol.z.rows(0, m).into_owned(),
        x_s: Some(sol.z.rows(ix, n).into_owned()),
        y_s: sol.z.rows(iy, p).into_owned(),
        alpha: DVector::zeros(0),
        iterations: sol.iterations,
        residuals: sol.residuals,
    })
}

/// True if a non-optimal solver status means the constraint sets admit no equilibrium.
pub fn is_infeasibility(err: &Error) -> bool {
    matches!(
        err,
        Error::Solver {
            status: QpStatus::PrimalInfeasible,
            ..
        }
    )
}
