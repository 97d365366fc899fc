use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("thinning bound violated at t={time}: hazard {rate} exceeds dominating rate {bound}")]
    ThinningBound { time: f64, rate: f64, bound: f64 },

    #[error("non-finite hazard evaluation at t={t}, s={s}, w={w}")]
    NonFiniteHazard { t: f64, s: f64, w: f64 },

    #[error("query outside table range: {0}")]
    OutOfRange(String),

    #[error("no censoring events in data; censoring MLE is undefined")]
    NoCensoringEvents,

    #[error("iterations did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("nuisance fit failed: {0}")]
    NuisanceFit(String),

    #[error("empty basis or zero exposure: {0}")]
    EmptyDesign(String),

    #[error("singular local design at w0={w0}")]
    SingularDesign { w0: f64 },

    #[error("empty smoothing window at w0={w0} (h={h})")]
    EmptyWindow { w0: f64, h: f64 },

    #[error("no detectable discontinuity in treatment (|a+ - a-| = {gap} < {floor})")]
    NoDiscontinuity { gap: f64, floor: f64 },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }

    /// Short class name, used by the CLI for its exit status line.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::InvalidInput(_) => "input",
            Error::ThinningBound { .. } => "simulation",
            Error::NonFiniteHazard { .. } | Error::OutOfRange(_) => "numeric",
            Error::NoCensoringEvents
            | Error::NonConvergence { .. }
            | Error::EmptyDesign(_)
            | Error::NuisanceFit(_) => "fit",
            Error::SingularDesign { .. } | Error::EmptyWindow { .. } => "smoother",
            Error::NoDiscontinuity { .. } => "rdd",
            Error::Fold { source, .. } => source.class(),
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}
