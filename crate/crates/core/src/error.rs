use alloc::string::String;

use crate::cascade::BudgetReport;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate quantization range: {0}")]
    DegenerateRange(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("model parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("need at least {needed} frames, got {got}")]
    InsufficientFrames { needed: usize, got: usize },

    #[error("{0}")]
    Budget(BudgetReport),

    #[error("cascade lifecycle: {0}")]
    Lifecycle(String),

    #[error("speaker verification: {0}")]
    Speaker(String),

    #[error("evaluation: {0}")]
    Evaluation(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn parse(offset: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            reason: reason.into(),
        }
    }
}
