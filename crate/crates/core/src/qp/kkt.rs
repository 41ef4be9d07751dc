use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{QpProblem, QpSolution};
use crate::linalg::inf_norm;

/// Infinity norms of the KKT conditions, computed independently of any solver state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `||Pz + q + A'y_eq + y_bound||`
    pub stationarity: f64,
    /// `||Az - b||`
    pub primal_equality: f64,
    /// Natural residual `||z - proj_[l,u](z + y_bound)||`; covers bound feasibility,
    /// multiplier signs and complementary slackness at once.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_equality)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(prob: &QpProblem, sol: &QpSolution) -> KktResiduals {
    kkt_residuals_at(prob, &sol.z, &sol.y_eq, &sol.y_bound)
}

pub fn kkt_residuals_at(
    prob: &QpProblem,
    z: &DVector<f64>,
    y_eq: &DVector<f64>,
    y_bound: &DVector<f64>,
) -> KktResiduals {
    let mut grad = prob.p() * z + prob.q() + y_bound;
    if prob.num_eq() > 0 {
        grad += prob.a().tr_mul(y_eq);
    }
    let primal_equality = if prob.num_eq() > 0 {
        inf_norm(&(prob.a() * z - prob.b()))
    } else {
        0.0
    };
    let mut complementarity = 0.0_f64;
    for i in 0..z.len() {
        let proj = (z[i] + y_bound[i]).clamp(prob.lower()[i], prob.upper()[i]);
        complementarity = complementarity.max((z[i] - proj).abs());
    }
    KktResiduals {
        stationarity: inf_norm(&grad),
        primal_equality,
        complementarity,
    }
}

/// Scale-aware acceptance test used by the solver for polished and ADMM points alike.
pub(super) fn within_tolerance(
    prob: &QpProblem,
    z: &DVector<f64>,
    y_eq: &DVector<f64>,
    y_bound: &DVector<f64>,
    eps_abs: f64,
    eps_rel: f64,
) -> bool {
    let r = kkt_residuals_at(prob, z, y_eq, y_bound);
    let pz = prob.p() * z;
    let aty = if prob.num_eq() > 0 {
        prob.a().tr_mul(y_eq)
    } else {
        DVector::zeros(z.len())
    };
    let az = if prob.num_eq() > 0 {
        prob.a() * z
    } else {
        DVector::zeros(0)
    };
    let prim_scale = inf_norm(&az).max(inf_norm(prob.b()));
    let dual_scale = inf_norm(&pz)
        .max(inf_norm(&aty))
        .max(inf_norm(y_bound))
        .max(inf_norm(prob.q()));
    let comp_scale = inf_norm(z);
    r.primal_equality <= eps_abs + eps_rel * prim_scale
        && r.stationarity <= eps_abs + eps_rel * dual_scale
        && r.complementarity <= eps_abs + eps_rel * comp_scale
}
