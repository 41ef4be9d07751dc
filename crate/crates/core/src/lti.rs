//! Discrete-time LTI plants: simulation, fixtures and model-based steady-state oracles.
//!
//! Nothing in this module is visible to the controller. It produces the measured data
//! and provides ground truth for tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Spectral radius that sampled fixture matrices are rescaled into.
const RANDOM_RADIUS: f64 = 0.95;
const RANDOM_ATTEMPTS: usize = 100;

/// State-space realization `x+ = Ax + Bu`, `y = Cx + Du`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemRealization {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

/// An input-output sequence of equal-length `u` and `y`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(u: Vec<DVector<f64>>, y: Vec<DVector<f64>>) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::dim(format!(
                "trajectory has {} inputs but {} outputs",
                u.len(),
                y.len()
            )));
        }
        Ok(Trajectory { u, y })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub x_s: DVector<f64>,
    pub u_s: DVector<f64>,
    pub y_s: DVector<f64>,
}

/// Least-squares steady-state input together with its output residual.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyInput {
    pub u_s: DVector<f64>,
    pub residual: f64,
}

impl SystemRealization {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        if n == 0 || m == 0 || p == 0 {
            return Err(Error::dim("n, m and p must all be positive"));
        }
        if !a.is_square() {
            return Err(Error::dim(format!(
                "A is {}x{}, expected square",
                n,
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::dim(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(Error::dim(format!(
                "C has {} columns, expected {n}",
                c.ncols()
            )));
        }
        if d.shape() != (p, m) {
            return Err(Error::dim(format!(
                "D is {}x{}, expected {p}x{m}",
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(SystemRealization { a, b, c, d })
    }

    /// Same as [`SystemRealization::new`] but additionally requires a minimal realization.
    pub fn new_minimal(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let sys = Self::new(a, b, c, d)?;
        sys.assert_minimal()?;
        Ok(sys)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn controllability_rank(&self) -> usize {
        linalg::rank(&linalg::controllability_matrix(&self.a, &self.b))
    }

    pub fn observability_rank(&self) -> usize {
        linalg::rank(&linalg::observability_matrix(&self.a, &self.c))
    }

    pub fn assert_minimal(&self) -> Result<()> {
        let n = self.n();
        let ctrb = self.controllability_rank();
        let obsv = self.observability_rank();
        if ctrb != n || obsv != n {
            return Err(Error::RankDeficient(format!(
                "realization is not minimal: controllability rank {ctrb}, observability rank {obsv}, order {n}"
            )));
        }
        Ok(())
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.a)
    }

    /// One step of the dynamics: returns `(Ax + Bu, Cx + Du)`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_state(x)?;
        self.check_input(u)?;
        let next = &self.a * x + &self.b * u;
        let y = &self.c * x + &self.d * u;
        Ok((next, y))
    }

    pub fn simulate(&self, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<Trajectory> {
        Ok(self.simulate_with_states(x0, inputs)?.0)
    }

    /// Simulates and also returns the state sequence `x_0..x_N` (one longer than the inputs).
    pub fn simulate_with_states(
        &self,
        x0: &DVector<f64>,
        inputs: &[DVector<f64>],
    ) -> Result<(Trajectory, Vec<DVector<f64>>)> {
        self.check_state(x0)?;
        let mut states = Vec::with_capacity(inputs.len() + 1);
        let mut ys = Vec::with_capacity(inputs.len());
        let mut x = x0.clone();
        for u in inputs {
            let (next, y) = self.step(&x, u)?;
            states.push(std::mem::replace(&mut x, next));
            ys.push(y);
        }
        states.push(x);
        Ok((
            Trajectory {
                u: inputs.to_vec(),
                y: ys,
            },
            states,
        ))
    }

    /// Steady-state gain `C (I - A)^{-1} B + D`.
    pub fn dc_gain(&self) -> Result<DMatrix<f64>> {
        let lu = self.resolvent_at_one()?;
        let x_gain = lu.solve(&self.b).ok_or_else(singular_at_one)?;
        Ok(&self.c * x_gain + &self.d)
    }

    pub fn steady_state_from_input(&self, u_s: &DVector<f64>) -> Result<SteadyState> {
        self.check_input(u_s)?;
        let lu = self.resolvent_at_one()?;
        let x_s = lu.solve(&(&self.b * u_s)).ok_or_else(singular_at_one)?;
        let y_s = &self.c * &x_s + &self.d * u_s;
        Ok(SteadyState {
            x_s,
            u_s: u_s.clone(),
            y_s,
        })
    }

    /// Least-squares steady-state input producing `y_s`; errors if the output is not
    /// attainable at steady state.
    pub fn steady_input_from_output(&self, y_s: &DVector<f64>) -> Result<SteadyInput> {
        if y_s.len() != self.p() {
            return Err(Error::dim(format!(
                "output has dimension {}, expected {}",
                y_s.len(),
                self.p()
            )));
        }
        let gain = self.dc_gain()?;
        let solver = linalg::MinNormSolver::new(&gain);
        if solver.rank() < self.m() {
            return Err(Error::RankDeficient(format!(
                "DC gain has rank {} < m = {}",
                solver.rank(),
                self.m()
            )));
        }
        let u_s = solver.solve(y_s);
        let residual = linalg::inf_norm(&(&gain * &u_s - y_s));
        if residual > 1e-9 * linalg::inf_norm(y_s).max(1.0) {
            return Err(Error::Unreachable { residual });
        }
        Ok(SteadyInput { u_s, residual })
    }

    fn resolvent_at_one(&self) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
        let n = self.n();
        let i_minus_a = DMatrix::identity(n, n) - &self.a;
        if linalg::rank(&i_minus_a) < n {
            return Err(singular_at_one());
        }
        Ok(i_minus_a.lu())
    }

    fn check_state(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::dim(format!(
                "state has dimension {}, expected {}",
                x.len(),
                self.n()
            )));
        }
        Ok(())
    }

    fn check_input(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.m() {
            return Err(Error::dim(format!(
                "input has dimension {}, expected {}",
                u.len(),
                self.m()
            )));
        }
        Ok(())
    }
}

fn singular_at_one() -> Error {
    Error::Singular("I - A is singular (A has an eigenvalue at 1)".into())
}

/// Linearized four-tank process, n = 4, m = 2, p = 2.
pub fn four_tank() -> SystemRealization {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.921, 0.0,   0.041, 0.0,
        0.0,   0.918, 0.0,   0.033,
        0.0,   0.0,   0.924, 0.0,
        0.0,   0.0,   0.0,   0.937,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 2, &[
        0.017, 0.001,
        0.001, 0.023,
        0.0,   0.061,
        0.072, 0.0,
    ]);
    #[rustfmt::skip]
    let c = DMatrix::from_row_slice(2, 4, &[
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
    ]);
    let d = DMatrix::zeros(2, 2);
    SystemRealization::new(a, b, c, d).expect("four-tank dimensions are consistent")
}

/// Deterministic, Schur-stable, minimal random realization with `D = 0`.
///
/// `A` has uniform entries in `[-1, 1]` and is rescaled so its spectral radius is at most
/// 0.95; `B` and `C` are uniform in `[-1, 1]`. Sampling repeats until the realization is
/// minimal (and `B` has full column rank when `m <= n`).
pub fn random_minimal(n: usize, m: usize, p: usize, seed: u64) -> Result<SystemRealization> {
    if n == 0 || m == 0 || p == 0 {
        return Err(Error::InvalidArgument(
            "n, m and p must all be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RANDOM_ATTEMPTS {
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..=1.0));
        let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..=1.0));
        let c = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..=1.0));
        let rho = linalg::spectral_radius(&a);
        if rho > RANDOM_RADIUS {
            a *= RANDOM_RADIUS / rho;
        }
        let sys = SystemRealization::new(a, b, c, DMatrix::zeros(p, m))?;
        if m <= n && linalg::rank(&sys.b) < m {
            continue;
        }
        if sys.assert_minimal().is_ok() && sys.spectral_radius() < 1.0 {
            return Ok(sys);
        }
    }
    Err(Error::Generation {
        attempts: RANDOM_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn four_tank_step_from_origin() {
        let sys = four_tank();
        let (x1, y) = sys.step(&DVector::zeros(4), &DVector::zeros(2)).unwrap();
        assert_eq!(x1, DVector::zeros(4));
        assert_eq!(y, DVector::zeros(2));

        let (x1, y) = sys.step(&DVector::zeros(4), &v(&[1.0, 0.0])).unwrap();
        assert_eq!(x1, v(&[0.017, 0.001, 0.0, 0.072]));
        assert_eq!(y, DVector::zeros(2));
    }

    #[test]
    fn four_tank_entries() {
        let sys = four_tank();
        assert_eq!(sys.a()[(0, 0)], 0.921);
        assert_eq!(sys.a()[(0, 2)], 0.041);
        assert_eq!(sys.b()[(3, 0)], 0.072);
        assert_eq!(sys.c()[(1, 1)], 1.0);
        assert_eq!(sys.d(), &DMatrix::zeros(2, 2));
        assert_eq!((sys.n(), sys.m(), sys.p()), (4, 2, 2));
        sys.assert_minimal().unwrap();
        assert!(sys.spectral_radius() < 1.0);
    }

    #[test]
    fn step_rejects_bad_dimensions() {
        let sys = four_tank();
        assert!(matches!(
            sys.step(&DVector::zeros(3), &DVector::zeros(2)),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            sys.step(&DVector::zeros(4), &DVector::zeros(1)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn step_matches_elementwise_loops() {
        let sys = random_minimal(3, 2, 2, 11).unwrap();
        let x = v(&[0.3, -1.2, 0.7]);
        let u = v(&[-0.4, 2.0]);
        let (next, y) = sys.step(&x, &u).unwrap();
        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += sys.a()[(i, j)] * x[j];
            }
            for j in 0..2 {
                acc += sys.b()[(i, j)] * u[j];
            }
            assert!((next[i] - acc).abs() < 1e-12);
        }
        for i in 0..2 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += sys.c()[(i, j)] * x[j];
            }
            for j in 0..2 {
                acc += sys.d()[(i, j)] * u[j];
            }
            assert!((y[i] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn simulate_trivial_cases() {
        let sys = four_tank();
        let traj = sys
            .simulate(&DVector::zeros(4), &vec![DVector::zeros(2); 3])
            .unwrap();
        assert_eq!(traj.len(), 3);
        assert!(traj.y.iter().all(|y| y == &DVector::zeros(2)));

        let traj = sys.simulate(&v(&[1.0, 2.0, 3.0, 4.0]), &[]).unwrap();
        assert!(traj.is_empty());
    }

    #[test]
    fn simulate_output_uses_state_before_update() {
        let sys = four_tank();
        let x0 = v(&[1.0, 2.0, 0.0, 0.0]);
        let traj = sys.simulate(&x0, &[v(&[5.0, 5.0])]).unwrap();
        assert_eq!(traj.y[0], v(&[1.0, 2.0]));
    }

    #[test]
    fn long_constant_input_reaches_steady_state() {
        let sys = four_tank();
        let u = v(&[1.0, 1.8]);
        let traj = sys
            .simulate(&DVector::zeros(4), &vec![u.clone(); 2000])
            .unwrap();
        let oracle = sys.steady_state_from_input(&u).unwrap();
        let last = traj.y.last().unwrap();
        assert!(linalg::inf_norm(&(last - &oracle.y_s)) < 1e-9);
        assert!(linalg::inf_norm(&(last - v(&[1.0, 1.0]))) < 5e-2);
    }

    #[test]
    fn steady_state_from_input_cases() {
        let sys = four_tank();
        let zero = sys.steady_state_from_input(&DVector::zeros(2)).unwrap();
        assert_eq!(zero.x_s, DVector::zeros(4));
        assert_eq!(zero.y_s, DVector::zeros(2));

        let ss = sys.steady_state_from_input(&v(&[1.0, 1.8])).unwrap();
        assert!(linalg::inf_norm(&(&ss.y_s - v(&[1.0, 1.0]))) < 0.05);

        // First DC-gain column against a long simulation.
        let e1 = v(&[1.0, 0.0]);
        let ss = sys.steady_state_from_input(&e1).unwrap();
        let gain = sys.dc_gain().unwrap();
        assert!(linalg::inf_norm(&(&ss.y_s - gain.column(0))) < 1e-12);
        let traj = sys.simulate(&DVector::zeros(4), &vec![e1; 5000]).unwrap();
        assert!(linalg::inf_norm(&(traj.y.last().unwrap() - &ss.y_s)) < 1e-3);
    }

    #[test]
    fn steady_state_is_a_fixed_point() {
        let sys = random_minimal(4, 2, 2, 3).unwrap();
        let ss = sys.steady_state_from_input(&v(&[0.4, -0.9])).unwrap();
        let (next, y) = sys.step(&ss.x_s, &ss.u_s).unwrap();
        assert!(linalg::inf_norm(&(next - &ss.x_s)) < 1e-9);
        assert!(linalg::inf_norm(&(y - &ss.y_s)) < 1e-9);
    }

    #[test]
    fn singular_resolvent_is_reported() {
        let sys = SystemRealization::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(matches!(
            sys.steady_state_from_input(&v(&[1.0])),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn steady_input_from_output_cases() {
        let sys = four_tank();
        let zero = sys.steady_input_from_output(&DVector::zeros(2)).unwrap();
        assert!(linalg::inf_norm(&zero.u_s) < 1e-15);

        let target = v(&[1.0, 1.0]);
        let sol = sys.steady_input_from_output(&target).unwrap();
        assert!(linalg::inf_norm(&(&sol.u_s - v(&[1.0, 1.8]))) < 0.1);
        let back = sys.steady_state_from_input(&sol.u_s).unwrap();
        assert!(linalg::inf_norm(&(back.y_s - target)) < 1e-9);
    }

    #[test]
    fn steady_input_errors() {
        // p = 2 > m = 1: most outputs are not reachable.
        let sys = SystemRealization::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.2]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        assert!(matches!(
            sys.steady_input_from_output(&v(&[1.0, 0.0])),
            Err(Error::Unreachable { .. })
        ));
        // Gain 2 in first channel, 1.25 in the second: (2, 1.25) is reachable.
        let ok = sys.steady_input_from_output(&v(&[2.0, 1.25])).unwrap();
        assert!((ok.u_s[0] - 1.0).abs() < 1e-12);

        // Zero gain: rank-deficient.
        let dead = SystemRealization::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(matches!(
            dead.steady_input_from_output(&v(&[0.0])),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn random_minimal_fixtures() {
        let s = random_minimal(1, 1, 1, 0).unwrap();
        assert!(s.a()[(0, 0)].abs() < 1.0);

        let a = random_minimal(3, 2, 2, 7).unwrap();
        let b = random_minimal(3, 2, 2, 7).unwrap();
        assert_eq!(a, b);
        a.assert_minimal().unwrap();
        assert!(a.spectral_radius() < 1.0);
        assert_ne!(a, random_minimal(3, 2, 2, 8).unwrap());
    }

    #[test]
    fn non_minimal_realization_is_rejected() {
        // Second state is unobservable.
        let r = SystemRealization::new_minimal(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        );
        assert!(matches!(r, Err(Error::RankDeficient(_))));
    }
}
