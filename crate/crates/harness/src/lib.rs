//! Experiment driver: refine a graph's edges with a language model, derive
//! pseudo-labels, train the joint model across seeds, and tabulate results.

pub mod config;
pub mod data;
pub mod diagnose;
pub mod pipeline;
pub mod pseudolabel;
pub mod refine;
pub mod report;

use tagtopo_core::train::TrainError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const BACKEND: i32 = 4;
    pub const CHECK: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("training: {0}")]
    Train(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("stage {stage}: {source}")]
    Stage { stage: &'static str, source: Box<HarnessError> },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => exit::CONFIG,
            Self::Data(_) => exit::DATA,
            Self::Backend(_) => exit::BACKEND,
            Self::Check(_) => exit::CHECK,
            Self::Stage { source, .. } => source.exit_code(),
            Self::Train(_) | Self::Io(_) | Self::Csv(_) | Self::Json(_) => exit::FAILURE,
        }
    }

    /// Attach the pipeline stage this error arose in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Self::Stage { .. } => self,
            other => Self::Stage { stage, source: Box::new(other) },
        }
    }
}

impl From<TrainError> for HarnessError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => Self::Config(m),
            other => Self::Train(other.to_string()),
        }
    }
}

/// Tag any error in `r` with `stage`.
pub fn stage<T>(stage: &'static str, r: Result<T, HarnessError>) -> Result<T, HarnessError> {
    r.map_err(|e| e.in_stage(stage))
}
