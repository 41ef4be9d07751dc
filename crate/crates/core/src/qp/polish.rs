use nalgebra::{DMatrix, DVector};

use super::admm::Scaled;
use super::kkt::within_tolerance;
use super::{QpProblem, QpSettings};
use crate::linalg::inf_norm;

pub(super) struct Polished {
    pub z: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_bound: DVector<f64>,
    /// Scaled primal and stacked dual, for restarting a further pass.
    xs: DVector<f64>,
    ys: DVector<f64>,
}

/// Bound side each variable is active on (-1 lower, 1 upper, 0 free), from the
/// complementarity condition `z = proj_[l,u](z + nu)`.
pub(super) fn classify(prob: &QpProblem, z: &DVector<f64>, nu: &DVector<f64>) -> Vec<i8> {
    (0..prob.num_vars())
        .map(|i| {
            let w = z[i] + nu[i];
            if w < prob.lower()[i] {
                -1
            } else if w > prob.upper()[i] {
                1
            } else {
                0
            }
        })
        .collect()
}

/// Repeated polish: each pass re-derives the active set from the previous polished point
/// (a primal-dual active-set step) until the KKT conditions hold or the set repeats.
pub(super) fn refine(
    s: &Scaled,
    prob: &QpProblem,
    active: Vec<i8>,
    x_start: &DVector<f64>,
    y_start: &DVector<f64>,
    settings: &QpSettings,
) -> Option<Polished> {
    let mut seen = vec![active.clone()];
    let mut active = active;
    let mut x = x_start.clone();
    let mut y = y_start.clone();
    for _ in 0..settings.polish_passes.max(1) {
        let p = polish(s, prob, &active, &x, &y, settings)?;
        if within_tolerance(
            prob,
            &p.z,
            &p.y_eq,
            &p.y_bound,
            settings.eps_abs,
            settings.eps_rel,
        ) {
            return Some(p);
        }
        let next = classify(prob, &p.z, &p.y_bound);
        if seen.contains(&next) {
            return None;
        }
        seen.push(next.clone());
        active = next;
        x = p.xs;
        y = p.ys;
    }
    None
}

/// Solves the equality-constrained problem obtained by turning the guessed active bounds
/// into equalities:
///
/// ```text
/// [P  A'  E'] [x  ]   [-q]
/// [A  0   0 ] [y  ] = [ b]
/// [E  0   0 ] [nu ]   [ v]
/// ```
///
/// The matrix is singular whenever constraints are redundant (Hankel rows, or a bound on
/// a variable the equalities already pin), so a regularized copy is factored once and the
/// exact system is solved by iterative refinement started from the ADMM iterate. Starting
/// there keeps the ADMM split of multipliers along degenerate directions, which carries
/// the correct signs.
fn polish(
    s: &Scaled,
    prob: &QpProblem,
    active: &[i8],
    x_start: &DVector<f64>,
    y_start: &DVector<f64>,
    settings: &QpSettings,
) -> Option<Polished> {
    let n = prob.num_vars();
    let meq = s.meq;
    let act: Vec<usize> = (0..n).filter(|&i| active[i] != 0).collect();
    let na = act.len();
    let dim = n + meq + na;

    let mut k0 = DMatrix::zeros(dim, dim);
    k0.view_mut((0, 0), (n, n)).copy_from(&s.p);
    for e in 0..meq {
        for j in 0..n {
            let v = s.a[(e, j)];
            k0[(n + e, j)] = v;
            k0[(j, n + e)] = v;
        }
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&s.q));
    rhs.rows_mut(n, meq).copy_from(&s.lo.rows(0, meq));
    for (r, &i) in act.iter().enumerate() {
        let row = meq + i;
        let v = s.a[(row, i)];
        k0[(n + meq + r, i)] = v;
        k0[(i, n + meq + r)] = v;
        rhs[n + meq + r] = if active[i] < 0 { s.lo[row] } else { s.hi[row] };
        if !rhs[n + meq + r].is_finite() {
            return None;
        }
    }

    let delta = settings.polish_delta;
    let mut kd = k0.clone();
    for i in 0..n {
        kd[(i, i)] += delta;
    }
    for i in n..dim {
        kd[(i, i)] -= delta;
    }
    let lu = kd.lu();

    let mut sol = DVector::zeros(dim);
    sol.rows_mut(0, n).copy_from(x_start);
    sol.rows_mut(n, meq).copy_from(&y_start.rows(0, meq));
    for (r, &i) in act.iter().enumerate() {
        sol[n + meq + r] = y_start[meq + i];
    }
    let scale = 1.0 + inf_norm(&rhs);
    for _ in 0..settings.polish_refine_iter {
        let res = &rhs - &k0 * &sol;
        if inf_norm(&res) <= 1e-15 * scale {
            break;
        }
        sol += lu.solve(&res)?;
    }
    // An inconsistent active set leaves a residual that refinement cannot remove.
    if sol.iter().any(|v| !v.is_finite()) || inf_norm(&(&rhs - &k0 * &sol)) > 1e-9 * scale {
        return None;
    }

    let z = sol.rows(0, n).component_mul(&s.d);
    let y_eq = DVector::from_fn(meq, |e, _| sol[n + e] * s.e[e] / s.c);
    let mut y_bound = DVector::zeros(n);
    let mut ys = DVector::zeros(meq + n);
    ys.rows_mut(0, meq).copy_from(&sol.rows(n, meq));
    for (r, &i) in act.iter().enumerate() {
        y_bound[i] = sol[n + meq + r] * s.e[meq + i] / s.c;
        ys[meq + i] = sol[n + meq + r];
    }
    Some(Polished {
        z,
        y_eq,
        y_bound,
        xs: sol.rows(0, n).into_owned(),
        ys,
    })
}
