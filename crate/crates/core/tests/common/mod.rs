//! Reference implementations used only as test oracles. None of this shares code with
//! the library solvers.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

pub fn inf(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Dense box-equality QP `min 1/2 z'Pz + q'z  s.t.  Az = b, l <= z <= u` with finite bounds.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl DenseQp {
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z)
    }
}

/// Random feasible instance. Odd seeds get a rank-deficient `P`.
pub fn random_qp(seed: u64) -> DenseQp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=16);
    let meq = rng.gen_range(0..=n / 2);
    let rank = if seed % 2 == 1 {
        rng.gen_range(1..n)
    } else {
        n
    };
    let mut g = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
    let m = g(rank, n);
    let mut p = m.transpose() * &m;
    if rank == n {
        p += DMatrix::identity(n, n) * 0.05;
    }
    let a = g(meq, n);
    let q = DVector::from_fn(n, |i, _| 2.0 * (m[(i % rank, i)] + p[(i, (i + 1) % n)]));
    let half = DVector::from_fn(n, |i, _| 0.5 + 0.1 * (i % 5) as f64);
    let l = -&half;
    let u = half.clone();
    // A strictly interior point fixes a feasible right-hand side.
    let z0 = DVector::from_fn(n, |i, _| 0.3 * half[i] * ((i as f64) * 1.7).sin());
    let b = &a * &z0;
    DenseQp { p, q, a, b, l, u }
}

fn clamp(z: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(z.len(), |i, _| z[i].clamp(l[i], u[i]))
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max().max(0.0)
}

/// Proximal method of multipliers with accelerated projected-gradient inner solves.
/// Each inner problem
/// `min f(z) + y'(Az - b) + rho/2 |Az - b|^2 + 1/(2 gamma) |z - z_k|^2` over the box is
/// strongly convex, so restarted FISTA converges linearly on it.
pub fn projected_gradient_oracle(qp: &DenseQp) -> DVector<f64> {
    let n = qp.q.len();
    let ata = qp.a.transpose() * &qp.a;
    let lp = lambda_max(&qp.p).max(1.0);
    let la = lambda_max(&ata);
    let rho = if la > 0.0 { 10.0 * lp / la } else { 0.0 };
    let mu = 0.05 * lp;
    let h = &qp.p + &ata * rho + DMatrix::identity(n, n) * mu;
    let lip = lambda_max(&h);

    let mut z = clamp(&DVector::zeros(n), &qp.l, &qp.u);
    let mut y = DVector::zeros(qp.b.len());
    for _outer in 0..20_000 {
        let anchor = z.clone();
        let c = &qp.q + qp.a.transpose() * (&y - &qp.b * rho) - &anchor * mu;
        let grad = |x: &DVector<f64>| &h * x + &c;
        let mut x = z.clone();
        let mut w = x.clone();
        let mut t = 1.0f64;
        for _ in 0..5_000 {
            let xn = clamp(&(&w - grad(&w) / lip), &qp.l, &qp.u);
            let step = inf(&(&xn - &x));
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            // Gradient restart keeps the iteration monotone.
            if (&xn - &x).dot(&(&w - &xn)) > 0.0 {
                w = xn.clone();
                t = 1.0;
            } else {
                w = &xn + (&xn - &x) * ((t - 1.0) / tn);
                t = tn;
            }
            x = xn;
            if step <= 1e-15 {
                break;
            }
        }
        z = x;
        let r = &qp.a * &z - &qp.b;
        y += &r * rho;
        if inf(&r) <= 1e-12 && inf(&(&z - &anchor)) <= 1e-12 {
            break;
        }
    }
    z
}

/// Independent KKT residuals of `(z, y, nu)` for `Pz + q + A'y + nu = 0`.
pub struct Kkt {
    pub stationarity: f64,
    pub primal: f64,
    pub bounds: f64,
    pub complementarity: f64,
}

pub fn kkt(qp: &DenseQp, z: &DVector<f64>, y: &DVector<f64>, nu: &DVector<f64>) -> Kkt {
    let stat = &qp.p * z + &qp.q + qp.a.transpose() * y + nu;
    let primal = if qp.b.is_empty() {
        0.0
    } else {
        inf(&(&qp.a * z - &qp.b))
    };
    let mut bounds = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..z.len() {
        bounds = bounds.max(qp.l[i] - z[i]).max(z[i] - qp.u[i]);
        // nu_i > 0 needs z_i at the upper bound, nu_i < 0 at the lower bound.
        let c = if nu[i] > 0.0 {
            nu[i].min(qp.u[i] - z[i])
        } else if nu[i] < 0.0 {
            (-nu[i]).min(z[i] - qp.l[i])
        } else {
            0.0
        };
        comp = comp.max(c);
    }
    Kkt {
        stationarity: inf(&stat),
        primal,
        bounds,
        complementarity: comp,
    }
}

/// DC gain `C (I - A)^{-1} B + D` computed from the raw matrices.
pub fn dc_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    let x = (DMatrix::identity(n, n) - a)
        .lu()
        .solve(b)
        .expect("I - A invertible");
    c * x + d
}

/// Steady-state setpoint problem on the model:
/// `min |u - u_t|_S^2 + |y - y_t|_T^2  s.t.  y = G u, u in U, y in Y`, as a box-equality QP
/// in `(u, y)` solved by the projected-gradient oracle.
#[allow(clippy::too_many_arguments)]
pub fn model_setpoint_oracle(
    g: &DMatrix<f64>,
    u_t: &DVector<f64>,
    y_t: &DVector<f64>,
    s: &DMatrix<f64>,
    t: &DMatrix<f64>,
    u_box: (&DVector<f64>, &DVector<f64>),
    y_box: (&DVector<f64>, &DVector<f64>),
) -> (DVector<f64>, DVector<f64>) {
    let (p, m) = g.shape();
    let n = m + p;
    let mut pm = DMatrix::zeros(n, n);
    pm.view_mut((0, 0), (m, m)).copy_from(&(s * 2.0));
    pm.view_mut((m, m), (p, p)).copy_from(&(t * 2.0));
    let mut q = DVector::zeros(n);
    q.rows_mut(0, m).copy_from(&(s * u_t * -2.0));
    q.rows_mut(m, p).copy_from(&(t * y_t * -2.0));
    let mut a = DMatrix::zeros(p, n);
    a.view_mut((0, 0), (p, m)).copy_from(&(-g));
    a.view_mut((0, m), (p, p)).fill_with_identity();
    let mut l = DVector::zeros(n);
    let mut u = DVector::zeros(n);
    l.rows_mut(0, m).copy_from(u_box.0);
    u.rows_mut(0, m).copy_from(u_box.1);
    l.rows_mut(m, p).copy_from(y_box.0);
    u.rows_mut(m, p).copy_from(y_box.1);
    let qp = DenseQp {
        p: pm,
        q,
        a,
        b: DVector::zeros(p),
        l,
        u,
    };
    let z = projected_gradient_oracle(&qp);
    (z.rows(0, m).into_owned(), z.rows(m, p).into_owned())
}
