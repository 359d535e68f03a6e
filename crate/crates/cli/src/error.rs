use gdc_core::tasks::TaskError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("propagation failed: {0}")]
    Propagation(String),

    #[error("certification failed")]
    Certification,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Propagation(_) => 4,
            CliError::Certification => 5,
        }
    }
}

impl From<gdc_core::Error> for CliError {
    fn from(e: gdc_core::Error) -> Self {
        match e {
            gdc_core::Error::TrainingDiverged { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::Input(e) => e.into(),
            TaskError::Propagation(a) => CliError::Propagation(a.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
