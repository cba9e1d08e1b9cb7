use std::path::PathBuf;

/// Errors produced by the library and the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-finite value at layer {layer} of the payoff network")]
    NonFiniteLayer { layer: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dense joint with n={n}, c={c} exceeds the 2^24 entry guard")]
    TooLarge { n: usize, c: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("loss became non-finite at batch index {index}")]
    NonFiniteLoss { index: usize },

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("integrator exceeded {max_steps} steps at t={t}")]
    MaxSteps { max_steps: usize, t: f64 },

    #[error("integrator step size {h:e} fell below h_min at t={t}")]
    StepTooSmall { h: f64, t: f64 },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
