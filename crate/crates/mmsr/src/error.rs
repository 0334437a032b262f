use mmsr_core::Error as CoreError;

/// Application error, split by the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Bad input, configuration or missing artifact (exit code 2).
    #[error("{0}")]
    Input(String),
    /// Failure while running a valid request (exit code 3).
    #[error("{0}")]
    Runtime(String),
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Input(_) => 2,
            AppError::Runtime(_) => 3,
        }
    }

    pub fn from_json(e: serde_json::Error) -> Self {
        AppError::Runtime(format!("json: {e}"))
    }

    /// Missing upstream artifact.
    pub fn run_first(stage: &str, path: &std::path::Path) -> Self {
        AppError::Input(format!("{} not found: run `{stage}` first", path.display()))
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(format!("io: {e}"))
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Diverged { .. } | CoreError::NonFinite(_) => AppError::Runtime(e.to_string()),
            _ => AppError::Input(e.to_string()),
        }
    }
}
