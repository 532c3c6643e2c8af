use thiserror::Error;

/// Harness failures map onto the CLI exit contract: configuration and usage
/// problems exit 2, experiment failures (no signal, insufficient data, I/O
/// on results) exit 1.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Experiment(String),
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub fn experiment(msg: impl Into<String>) -> Self {
        HarnessError::Experiment(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Experiment(_) => 1,
        }
    }
}

/// Core errors surfacing mid-experiment are experiment failures; parameter
/// rejections are config mistakes the user can fix.
impl From<zlsim_core::Error> for HarnessError {
    fn from(e: zlsim_core::Error) -> Self {
        match e {
            zlsim_core::Error::Parameter(_) => HarnessError::Config(e.to_string()),
            _ => HarnessError::Experiment(e.to_string()),
        }
    }
}
