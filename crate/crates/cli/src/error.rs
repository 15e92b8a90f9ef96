use std::fmt;

use char2subword::training::TrainError;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// A failure tagged with the pipeline stage it came from.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub message: String,
    pub code: u8,
}

impl CliError {
    pub fn usage(stage: &'static str, message: impl fmt::Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
            code: EXIT_USAGE,
        }
    }

    pub fn numeric(stage: &'static str, message: impl fmt::Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
            code: EXIT_NUMERIC,
        }
    }

    pub fn training(stage: &'static str, e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => Self::numeric(stage, e),
            other => Self::usage(stage, other),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}
