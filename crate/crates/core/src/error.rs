use thiserror::Error;

#[derive(Debug, Error)]
pub enum PtoError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("QP stage {stage}: Hessian block is not positive semi-definite")]
    NotPsd { stage: usize },
    #[error("QP stage {stage}: control Hessian is singular")]
    SingularControlHessian { stage: usize },
    #[error("no feasible candidate")]
    NoFeasibleCandidate,
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario validation error: {0}")]
    Validation(String),
    #[error("runtime abort at t = {time:.2} s: {reason}")]
    Aborted { time: f64, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = PtoError> = std::result::Result<T, E>;
