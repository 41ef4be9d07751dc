//! Dense convex QP solver for
//!
//! ```text
//! minimize    1/2 z'Pz + q'z
//! subject to  Az = b,  l <= z <= u
//! ```
//!
//! with `P` symmetric positive semidefinite. The solver is an operator-splitting (ADMM)
//! iteration with Ruiz equilibration and adaptive step size, followed by an active-set
//! polish that solves the equality-constrained KKT system to high accuracy.

mod admm;
mod dump;
mod kkt;
mod polish;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use admm::solve_qp;
pub use dump::{read_problem, write_problem};
pub use kkt::{kkt_residuals, kkt_residuals_at, KktResiduals};

/// Named slice of the decision vector, used for diagnostics and problem dumps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
    blocks: Vec<VariableBlock>,
}

impl QpProblem {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let n = q.len();
        if p.shape() != (n, n) {
            return Err(Error::dim(format!(
                "P is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            )));
        }
        if a.ncols() != n && !(a.nrows() == 0) {
            return Err(Error::dim(format!(
                "A has {} columns, expected {n}",
                a.ncols()
            )));
        }
        if a.nrows() != b.len() {
            return Err(Error::dim(format!(
                "A has {} rows but b has length {}",
                a.nrows(),
                b.len()
            )));
        }
        if lower.len() != n || upper.len() != n {
            return Err(Error::dim("bounds must have one entry per variable"));
        }
        if p.iter()
            .chain(q.iter())
            .chain(a.iter())
            .chain(b.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument(
                "P, q, A and b must be finite".into(),
            ));
        }
        if !linalg::is_symmetric(&p, 1e-12) {
            return Err(Error::InvalidArgument("P is not symmetric".into()));
        }
        for i in 0..n {
            let (l, u) = (lower[i], upper[i]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!(
                    "empty bound interval for variable {i}: [{l}, {u}]"
                )));
            }
        }
        let a = if a.nrows() == 0 {
            DMatrix::zeros(0, n)
        } else {
            a
        };
        Ok(QpProblem {
            p,
            q,
            a,
            b,
            lower,
            upper,
            blocks: Vec::new(),
        })
    }

    pub fn with_blocks(mut self, blocks: Vec<VariableBlock>) -> Self {
        self.blocks = blocks;
        self
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }
    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }
    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }
    pub fn blocks(&self) -> &[VariableBlock] {
        &self.blocks
    }
    pub fn block(&self, name: &str) -> Option<&VariableBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
    pub fn num_vars(&self) -> usize {
        self.q.len()
    }
    pub fn num_eq(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * linalg::quad_form(&self.p, z) + self.q.dot(z)
    }

    /// Largest violation of the equality rows or the bounds.
    pub fn constraint_violation(&self, z: &DVector<f64>) -> f64 {
        let eq = if self.num_eq() > 0 {
            linalg::inf_norm(&(&self.a * z - &self.b))
        } else {
            0.0
        };
        let bounds = (0..z.len())
            .map(|i| (self.lower[i] - z[i]).max(z[i] - self.upper[i]).max(0.0))
            .fold(0.0, f64::max);
        eq.max(bounds)
    }

    pub(crate) fn clamp_to_bounds(&self, z: &mut DVector<f64>) {
        for i in 0..z.len() {
            z[i] = z[i].clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    PrimalInfeasible,
    DualInfeasible,
}

impl fmt::Display for QpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QpStatus::Optimal => "optimal",
            QpStatus::MaxIterations => "max_iterations",
            QpStatus::PrimalInfeasible => "primal_infeasible",
            QpStatus::DualInfeasible => "dual_infeasible",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    /// Initial ADMM step size.
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation parameter in (0, 2).
    pub relaxation: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_primal_infeasible: f64,
    pub eps_dual_infeasible: f64,
    pub max_iter: usize,
    /// Iterations between step-size updates (0 disables adaptation).
    pub adaptive_rho_interval: usize,
    pub scaling_iterations: usize,
    pub polish: bool,
    pub polish_delta: f64,
    pub polish_refine_iter: usize,
    /// Active-set passes per polish attempt.
    pub polish_passes: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            rho: 0.1,
            sigma: 1e-6,
            relaxation: 1.6,
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            eps_primal_infeasible: 1e-6,
            eps_dual_infeasible: 1e-6,
            max_iter: 50_000,
            adaptive_rho_interval: 50,
            scaling_iterations: 10,
            polish: true,
            polish_delta: 1e-7,
            polish_refine_iter: 50,
            polish_passes: 10,
        }
    }
}

/// Primal (and optionally dual) starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub y_eq: Option<DVector<f64>>,
    pub y_bound: Option<DVector<f64>>,
}

impl WarmStart {
    pub fn primal(z: DVector<f64>) -> Self {
        WarmStart {
            z,
            y_eq: None,
            y_bound: None,
        }
    }

    pub fn from_solution(sol: &QpSolution) -> Self {
        WarmStart {
            z: sol.z.clone(),
            y_eq: Some(sol.y_eq.clone()),
            y_bound: Some(sol.y_bound.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Multipliers of `Az = b`.
    pub y_eq: DVector<f64>,
    /// Bound multipliers: positive where the upper bound is active, negative at the lower.
    pub y_bound: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
    pub residuals: KktResiduals,
    pub polished: bool,
    /// A polish was attempted at termination but did not produce an acceptable point.
    pub polish_failed: bool,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    /// Converts a non-optimal status into a solver error carrying the diagnostics.
    pub fn into_result(self) -> Result<Self> {
        if self.is_optimal() {
            Ok(self)
        } else {
            Err(Error::Solver {
                status: self.status,
                iterations: self.iterations,
                prim_res: self.residuals.primal_equality,
                dual_res: self.residuals.stationarity,
            })
        }
    }
}

#[cfg(test)]
mod tests;
