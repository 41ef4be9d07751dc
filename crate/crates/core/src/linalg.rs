//! Dense linear-algebra helpers shared by the plant, data and controller modules.

use nalgebra::{DMatrix, DVector};

/// Relative factor of the default rank rule: `sigma_i > max(rows, cols) * sigma_max * RANK_RTOL`.
pub const RANK_RTOL: f64 = 1e-12;

/// Outcome of a singular-value rank determination.
#[derive(Debug, Clone)]
pub struct RankInfo {
    pub rank: usize,
    /// Smallest singular value that counted towards the rank (0 when the rank is 0).
    pub margin: f64,
    pub sigma_max: f64,
    pub singular_values: Vec<f64>,
}

pub fn rank_info(m: &DMatrix<f64>) -> RankInfo {
    rank_info_with(m, RANK_RTOL)
}

pub fn rank_info_with(m: &DMatrix<f64>, rtol: f64) -> RankInfo {
    if m.is_empty() {
        return RankInfo {
            rank: 0,
            margin: 0.0,
            sigma_max: 0.0,
            singular_values: Vec::new(),
        };
    }
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let sigma_max = sv[0];
    let tol = m.nrows().max(m.ncols()) as f64 * sigma_max * rtol;
    let rank = sv.iter().filter(|&&s| s > tol && s > 0.0).count();
    let margin = if rank == 0 { 0.0 } else { sv[rank - 1] };
    RankInfo {
        rank,
        margin,
        sigma_max,
        singular_values: sv,
    }
}

pub fn rank(m: &DMatrix<f64>) -> usize {
    rank_info(m).rank
}

/// Truncated-SVD pseudo-inverse, giving minimum-norm least-squares solutions.
#[derive(Debug, Clone)]
pub struct MinNormSolver {
    u_t: DMatrix<f64>,
    inv_sigma: DVector<f64>,
    v: DMatrix<f64>,
    rank: usize,
}

impl MinNormSolver {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let svd = m.clone().svd(true, true);
        let u = svd.u.expect("svd requested u");
        let v_t = svd.v_t.expect("svd requested v_t");
        let sigma = svd.singular_values;
        let sigma_max = sigma.iter().copied().fold(0.0_f64, f64::max);
        let tol = rows.max(cols) as f64 * sigma_max * RANK_RTOL;
        let mut rank = 0;
        let inv_sigma = sigma.map(|s| {
            if s > tol && s > 0.0 {
                rank += 1;
                1.0 / s
            } else {
                0.0
            }
        });
        MinNormSolver {
            u_t: u.transpose(),
            inv_sigma,
            v: v_t.transpose(),
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut w = &self.u_t * rhs;
        w.component_mul_assign(&self.inv_sigma);
        &self.v * w
    }
}

/// `[B AB ... A^{n-1}B]`
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for i in 0..n {
        out.view_mut((0, i * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    out
}

/// `[C; CA; ...; CA^{n-1}]`
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = c.nrows();
    let mut out = DMatrix::zeros(n * p, n);
    let mut blk = c.clone();
    for i in 0..n {
        out.view_mut((i * p, 0), (p, n)).copy_from(&blk);
        blk *= a;
    }
    out
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * m.amax().max(1.0)
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    is_symmetric(m, 1e-12) && m.clone().cholesky().is_some()
}

pub fn is_positive_semidefinite(m: &DMatrix<f64>) -> bool {
    if !is_symmetric(m, 1e-12) {
        return false;
    }
    if m.is_empty() {
        return true;
    }
    let eig = m.clone().symmetric_eigen();
    let scale = m.amax().max(1.0);
    eig.eigenvalues.iter().all(|&l| l >= -1e-12 * scale)
}

/// Flattens a vector sequence into one stacked column.
pub fn stack(seq: &[DVector<f64>]) -> DVector<f64> {
    let len: usize = seq.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(len);
    let mut off = 0;
    for v in seq {
        out.rows_mut(off, v.len()).copy_from(v);
        off += v.len();
    }
    out
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// `x^T M x`
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}
