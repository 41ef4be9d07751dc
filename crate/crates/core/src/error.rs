use thiserror::Error;

use crate::qp::QpStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("output is not reachable at steady state (residual {residual:.3e})")]
    Unreachable { residual: f64 },

    #[error("could not generate a minimal realization after {attempts} attempts")]
    Generation { attempts: usize },

    #[error("window of depth {depth} does not fit a sequence of length {len}")]
    Window { depth: usize, len: usize },

    #[error(
        "input is not persistently exciting of order {order}: rank {rank} < {required}{}",
        if *structural { " (data too short, structurally impossible)" } else { "" }
    )]
    NotPersistentlyExciting {
        order: usize,
        rank: usize,
        required: usize,
        structural: bool,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error(
        "QP solve ended with status {status} after {iterations} iterations \
         (primal residual {prim_res:.3e}, dual residual {dual_res:.3e})"
    )]
    Solver {
        status: QpStatus,
        iterations: usize,
        prim_res: f64,
        dual_res: f64,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
