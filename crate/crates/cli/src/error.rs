use std::path::PathBuf;

use difficulty_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing {path}; run `mcqdiff {stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("{path} exists: another run is using this output directory (remove the file if that run died)")]
    Locked { path: PathBuf },
    #[error("provider: {0}")]
    Provider(String),
    #[error(transparent)]
    Data(#[from] Error),
}

impl CliError {
    /// 1 usage/config, 2 data, 3 provider.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Provider(_) | CliError::Data(Error::Llm(_)) => 3,
            CliError::MissingArtifact { .. } | CliError::Locked { .. } | CliError::Data(_) => 2,
        }
    }
}
