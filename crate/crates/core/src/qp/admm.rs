use nalgebra::{DMatrix, DVector};

use super::kkt::kkt_residuals_at;
use super::polish::{classify, refine};
use super::{QpProblem, QpSettings, QpSolution, QpStatus, WarmStart};
use crate::linalg::inf_norm;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_REFACTOR_RATIO: f64 = 5.0;
const SCALING_MIN: f64 = 1e-4;
const SCALING_MAX: f64 = 1e4;
const TINY: f64 = 1e-30;

/// Equilibrated copy of the problem with the bounds folded into the constraint matrix:
/// `Abar = [A; I]`, `lo = [b; l]`, `hi = [b; u]`.
///
/// Scaled quantities relate to the original ones by `x = D xs`, `Abar_s = E Abar D`,
/// `P_s = c D P D`, `q_s = c D q`, `y = E ys / c`.
pub(super) struct Scaled {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    pub d: DVector<f64>,
    pub e: DVector<f64>,
    pub c: f64,
    pub meq: usize,
}

fn limit_scaling(v: f64) -> f64 {
    if v < SCALING_MIN {
        1.0
    } else {
        v.min(SCALING_MAX)
    }
}

fn stacked_constraints(prob: &QpProblem) -> DMatrix<f64> {
    let n = prob.num_vars();
    let meq = prob.num_eq();
    let mut abar = DMatrix::zeros(meq + n, n);
    abar.rows_mut(0, meq).copy_from(prob.a());
    abar.rows_mut(meq, n).fill_with_identity();
    abar
}

impl Scaled {
    fn new(prob: &QpProblem, iterations: usize) -> Self {
        let n = prob.num_vars();
        let meq = prob.num_eq();
        let mt = meq + n;
        let mut p = prob.p().clone();
        let mut q = prob.q().clone();
        let mut a = stacked_constraints(prob);
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(mt, 1.0);
        let mut c = 1.0;

        for _ in 0..iterations {
            let mut dd = DVector::zeros(n);
            for j in 0..n {
                let pn = p.column(j).amax();
                let an = a.column(j).amax();
                dd[j] = 1.0 / limit_scaling(pn.max(an)).sqrt();
            }
            let mut ee = DVector::zeros(mt);
            for i in 0..mt {
                ee[i] = 1.0 / limit_scaling(a.row(i).amax()).sqrt();
            }
            for j in 0..n {
                for i in 0..n {
                    p[(i, j)] *= dd[i] * dd[j];
                }
                for i in 0..mt {
                    a[(i, j)] *= ee[i] * dd[j];
                }
            }
            q.component_mul_assign(&dd);
            d.component_mul_assign(&dd);
            e.component_mul_assign(&ee);

            let mean_col = if n > 0 {
                (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64
            } else {
                0.0
            };
            let gamma = 1.0 / limit_scaling(mean_col.max(inf_norm(&q)));
            p *= gamma;
            q *= gamma;
            c *= gamma;
        }

        let mut lo = DVector::zeros(mt);
        let mut hi = DVector::zeros(mt);
        for i in 0..meq {
            lo[i] = prob.b()[i] * e[i];
            hi[i] = lo[i];
        }
        for i in 0..n {
            lo[meq + i] = prob.lower()[i] * e[meq + i];
            hi[meq + i] = prob.upper()[i] * e[meq + i];
        }
        Scaled {
            p,
            q,
            a,
            lo,
            hi,
            d,
            e,
            c,
            meq,
        }
    }

    fn rho_vector(&self, rho: f64) -> DVector<f64> {
        DVector::from_fn(self.lo.len(), |i, _| {
            let (l, h) = (self.lo[i], self.hi[i]);
            if l == f64::NEG_INFINITY && h == f64::INFINITY {
                RHO_MIN
            } else if l == h {
                RHO_EQ_FACTOR * rho
            } else {
                rho
            }
        })
    }

    fn factor(
        &self,
        sigma: f64,
        rho_vec: &DVector<f64>,
    ) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let n = self.p.nrows();
        let mut ra = self.a.clone();
        for (i, mut row) in ra.row_iter_mut().enumerate() {
            row *= rho_vec[i];
        }
        let mut k = &self.p + DMatrix::identity(n, n) * sigma + self.a.tr_mul(&ra);
        k = (&k + k.transpose()) * 0.5;
        k.cholesky()
    }

    fn unscale_x(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.d)
    }
    fn unscale_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.component_mul(&self.e) / self.c
    }
    fn unscale_z(&self, z: &DVector<f64>) -> DVector<f64> {
        z.component_div(&self.e)
    }
}

fn clamp_into(v: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    for i in 0..v.len() {
        v[i] = v[i].clamp(lo[i], hi[i]);
    }
}

struct Candidate {
    z: DVector<f64>,
    y_eq: DVector<f64>,
    y_bound: DVector<f64>,
}

fn finish(
    prob: &QpProblem,
    mut cand: Candidate,
    status: QpStatus,
    iterations: usize,
    polished: bool,
    polish_failed: bool,
) -> QpSolution {
    if status == QpStatus::Optimal || status == QpStatus::MaxIterations {
        prob.clamp_to_bounds(&mut cand.z);
    }
    let residuals = kkt_residuals_at(prob, &cand.z, &cand.y_eq, &cand.y_bound);
    QpSolution {
        objective: prob.objective(&cand.z),
        z: cand.z,
        y_eq: cand.y_eq,
        y_bound: cand.y_bound,
        status,
        iterations,
        residuals,
        polished,
        polish_failed,
    }
}

/// Solves the QP. Never panics on valid problems; non-optimal outcomes are reported
/// through [`QpSolution::status`] together with the best iterate found.
pub fn solve_qp(prob: &QpProblem, settings: &QpSettings, warm: Option<&WarmStart>) -> QpSolution {
    let n = prob.num_vars();
    let meq = prob.num_eq();
    let mt = meq + n;
    let s = Scaled::new(prob, settings.scaling_iterations);
    let abar = stacked_constraints(prob);

    let mut rho = settings.rho.clamp(RHO_MIN, RHO_MAX);
    let mut rho_vec = s.rho_vector(rho);
    let sigma = settings.sigma;
    let alpha = settings.relaxation;
    let mut chol = match s.factor(sigma, &rho_vec) {
        Some(c) => c,
        None => {
            let cand = Candidate {
                z: DVector::zeros(n),
                y_eq: DVector::zeros(meq),
                y_bound: DVector::zeros(n),
            };
            return finish(prob, cand, QpStatus::MaxIterations, 0, false, false);
        }
    };

    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(mt);
    let mut y = DVector::zeros(mt);
    if let Some(w) = warm {
        if w.z.len() == n {
            x = w.z.component_div(&s.d);
            let mut zu = &abar * &w.z;
            for i in 0..meq {
                zu[i] = prob.b()[i];
            }
            for i in 0..n {
                zu[meq + i] = zu[meq + i].clamp(prob.lower()[i], prob.upper()[i]);
            }
            z = zu.component_mul(&s.e);
        }
        if let Some(ye) = w.y_eq.as_ref().filter(|v| v.len() == meq) {
            for i in 0..meq {
                y[i] = ye[i] * s.c / s.e[i];
            }
        }
        if let Some(yb) = w.y_bound.as_ref().filter(|v| v.len() == n) {
            for i in 0..n {
                y[meq + i] = yb[i] * s.c / s.e[meq + i];
            }
        }
    }

    let mut best: Option<(f64, Candidate)> = None;
    let mut prev_active: Option<Vec<i8>> = None;
    let mut polished_active: Option<Vec<i8>> = None;

    let mut x_prev;
    let mut y_prev;
    for iter in 1..=settings.max_iter {
        x_prev = x.clone();
        y_prev = y.clone();

        let mut rhs = &x * sigma - &s.q;
        rhs += s.a.tr_mul(&(rho_vec.component_mul(&z) - &y));
        let xt = chol.solve(&rhs);
        let zt = &s.a * &xt;
        x = &xt * alpha + &x * (1.0 - alpha);
        let zr = &zt * alpha + &z * (1.0 - alpha);
        let mut z_new = &zr + y.component_div(&rho_vec);
        clamp_into(&mut z_new, &s.lo, &s.hi);
        y += rho_vec.component_mul(&(&zr - &z_new));
        z = z_new;

        let check = iter <= 10 || iter % 5 == 0 || iter == settings.max_iter;
        if check {
            let xu = s.unscale_x(&x);
            let zu = s.unscale_z(&z);
            let yu = s.unscale_y(&y);
            let ax = &abar * &xu;
            let prim = inf_norm(&(&ax - &zu));
            let prim_scale = inf_norm(&ax).max(inf_norm(&zu));
            let px = prob.p() * &xu;
            let aty = abar.tr_mul(&yu);
            let dual = inf_norm(&(&px + prob.q() + &aty));
            let dual_scale = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(prob.q()));
            let eps_p = settings.eps_abs + settings.eps_rel * prim_scale;
            let eps_d = settings.eps_abs + settings.eps_rel * dual_scale;
            let converged = prim <= eps_p && dual <= eps_d;

            let cand = Candidate {
                z: xu.clone(),
                y_eq: yu.rows(0, meq).into_owned(),
                y_bound: yu.rows(meq, n).into_owned(),
            };

            if settings.polish {
                let active = classify(
                    prob,
                    &zu.rows(meq, n).into_owned(),
                    &yu.rows(meq, n).into_owned(),
                );
                let stable = prev_active.as_ref() == Some(&active);
                let untried = polished_active.as_ref() != Some(&active);
                if (stable || converged) && untried {
                    polished_active = Some(active.clone());
                    let found = refine(&s, prob, active.clone(), &x, &y, settings);
                    if let Some(p) = found {
                        let cand = Candidate {
                            z: p.z,
                            y_eq: p.y_eq,
                            y_bound: p.y_bound,
                        };
                        return finish(prob, cand, QpStatus::Optimal, iter, true, false);
                    }
                }
                prev_active = Some(active);
            }

            if converged {
                return finish(prob, cand, QpStatus::Optimal, iter, false, settings.polish);
            }

            let score = (prim / eps_p).max(dual / eps_d);
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, cand));
            }

            if let Some(status) =
                detect_infeasibility(prob, &s, &abar, &x, &x_prev, &y, &y_prev, settings)
            {
                let cand = match status {
                    QpStatus::PrimalInfeasible => {
                        let dy = s.unscale_y(&(&y - &y_prev));
                        let nrm = inf_norm(&dy).max(TINY);
                        Candidate {
                            z: DVector::from_element(n, f64::NAN),
                            y_eq: dy.rows(0, meq) / nrm,
                            y_bound: dy.rows(meq, n) / nrm,
                        }
                    }
                    _ => {
                        let dx = s.unscale_x(&(&x - &x_prev));
                        let nrm = inf_norm(&dx).max(TINY);
                        Candidate {
                            z: dx / nrm,
                            y_eq: DVector::from_element(meq, f64::NAN),
                            y_bound: DVector::from_element(n, f64::NAN),
                        }
                    }
                };
                return finish(prob, cand, status, iter, false, false);
            }
        }

        if settings.adaptive_rho_interval > 0 && iter % settings.adaptive_rho_interval == 0 {
            let ax = &s.a * &x;
            let prim = inf_norm(&(&ax - &z)) / inf_norm(&ax).max(inf_norm(&z)).max(TINY);
            let px = &s.p * &x;
            let aty = s.a.tr_mul(&y);
            let dual = inf_norm(&(&px + &s.q + &aty))
                / inf_norm(&px)
                    .max(inf_norm(&aty))
                    .max(inf_norm(&s.q))
                    .max(TINY);
            let new_rho = (rho * (prim / dual.max(TINY)).sqrt()).clamp(RHO_MIN, RHO_MAX);
            if new_rho.is_finite()
                && (new_rho > rho * RHO_REFACTOR_RATIO || new_rho < rho / RHO_REFACTOR_RATIO)
            {
                let new_vec = s.rho_vector(new_rho);
                if let Some(c) = s.factor(sigma, &new_vec) {
                    rho = new_rho;
                    rho_vec = new_vec;
                    chol = c;
                }
            }
        }
    }

    let cand = match best {
        Some((_, c)) => c,
        None => Candidate {
            z: s.unscale_x(&x),
            y_eq: s.unscale_y(&y).rows(0, meq).into_owned(),
            y_bound: s.unscale_y(&y).rows(meq, n).into_owned(),
        },
    };
    finish(
        prob,
        cand,
        QpStatus::MaxIterations,
        settings.max_iter,
        false,
        false,
    )
}

#[allow(clippy::too_many_arguments)]
fn detect_infeasibility(
    prob: &QpProblem,
    s: &Scaled,
    abar: &DMatrix<f64>,
    x: &DVector<f64>,
    x_prev: &DVector<f64>,
    y: &DVector<f64>,
    y_prev: &DVector<f64>,
    settings: &QpSettings,
) -> Option<QpStatus> {
    let n = prob.num_vars();
    let meq = s.meq;
    let lo = |i: usize| {
        if i < meq {
            prob.b()[i]
        } else {
            prob.lower()[i - meq]
        }
    };
    let hi = |i: usize| {
        if i < meq {
            prob.b()[i]
        } else {
            prob.upper()[i - meq]
        }
    };

    // Primal: a nonzero dual direction w with Abar'w = 0 and support function negative.
    let mut dy = s.unscale_y(&(y - y_prev));
    for i in 0..dy.len() {
        let (l, h) = (lo(i), hi(i));
        if h == f64::INFINITY && l == f64::NEG_INFINITY {
            dy[i] = 0.0;
        } else if h == f64::INFINITY {
            dy[i] = dy[i].min(0.0);
        } else if l == f64::NEG_INFINITY {
            dy[i] = dy[i].max(0.0);
        }
    }
    let ny = inf_norm(&dy);
    if ny > TINY {
        let w = &dy / ny;
        let eps = settings.eps_primal_infeasible;
        if inf_norm(&abar.tr_mul(&w)) <= eps {
            let support: f64 = (0..w.len())
                .map(|i| {
                    if w[i] > 0.0 {
                        hi(i) * w[i]
                    } else if w[i] < 0.0 {
                        lo(i) * w[i]
                    } else {
                        0.0
                    }
                })
                .sum();
            if support < -eps {
                return Some(QpStatus::PrimalInfeasible);
            }
        }
    }

    // Dual: a primal recession direction with P d = 0, q'd < 0, Abar d in the recession cone.
    let dx = s.unscale_x(&(x - x_prev));
    let nx = inf_norm(&dx);
    if nx > TINY {
        let w = &dx / nx;
        let eps = settings.eps_dual_infeasible;
        if prob.q().dot(&w) < -eps && inf_norm(&(prob.p() * &w)) <= eps {
            let aw = abar * &w;
            let ok = (0..meq + n).all(|i| {
                let upper_ok = hi(i) == f64::INFINITY || aw[i] <= eps;
                let lower_ok = lo(i) == f64::NEG_INFINITY || aw[i] >= -eps;
                upper_ok && lower_ok
            });
            if ok {
                return Some(QpStatus::DualInfeasible);
            }
        }
    }
    None
}
