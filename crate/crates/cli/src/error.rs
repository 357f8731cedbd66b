use egogesture::dataio::DataioError;
use egogesture::inference::InferenceError;
use egogesture::kinematics::KinematicsError;
use egogesture::training::TrainingError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// A check ran and reported failure; the report itself was printed.
    #[error("check failed")]
    CheckFailed,
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Incompatible(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::CheckFailed => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Incompatible(_) => 5,
        }
    }
}

impl From<DataioError> for CliError {
    fn from(e: DataioError) -> Self {
        match e {
            DataioError::VersionMismatch { .. } | DataioError::ShapeMismatch(_) => CliError::Incompatible(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainingError::ShapeMismatch(_) | TrainingError::Model(_) | TrainingError::LabelOutsideTask { .. } => {
                CliError::Incompatible(e.to_string())
            }
            // Degenerate homographies in the input data.
            TrainingError::Feature(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<KinematicsError> for CliError {
    fn from(e: KinematicsError) -> Self {
        match e {
            KinematicsError::IncompatibleRate { .. } => CliError::Incompatible(e.to_string()),
            KinematicsError::UnsupportedFrameRate(_) | KinematicsError::InvalidProfile(_) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::InvalidWindow => CliError::Usage(e.to_string()),
            InferenceError::Feature(_) => CliError::Io(e.to_string()),
            _ => CliError::Incompatible(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
