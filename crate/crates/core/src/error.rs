use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("model evaluation produced a non-finite value in {function} at {point}")]
    ModelEvaluation { function: &'static str, point: String },

    #[error("unbounded objective: {0}")]
    Unbounded(String),

    #[error("step size {dt} exceeds the fast-scale limit {limit} (dt must be <= epsilon/10)")]
    StepSize { dt: f64, limit: f64 },

    #[error("trajectory diverged at step {step} (t = {time})")]
    Divergence { step: usize, time: f64 },

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("scheme unstable at tau = {tau}: sup norm {norm} exceeds guard {guard}")]
    Instability { tau: f64, norm: f64, guard: f64 },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("stage `{stage}` failed: {cause}")]
    Stage { stage: String, cause: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            cause: Box::new(self),
        }
    }
}
