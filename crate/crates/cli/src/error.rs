use std::path::{Path, PathBuf};

use thiserror::Error;

use texgram_core::clustering::ClusterError;
use texgram_core::engine::EngineError;
use texgram_core::gram::GramError;
use texgram_core::infotheory::InfoError;
use texgram_core::rdm::RdmError;
use texgram_core::stats::StatsError;
use texgram_core::synthesis::SynthesisError;

/// Pipeline failures, grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("stale cache entry {path}: {reason}; delete it to recompute")]
    StaleCache { path: PathBuf, reason: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) | PipelineError::Io { .. } | PipelineError::StaleCache { .. } => 3,
            PipelineError::Numerical(_) => 4,
        }
    }

    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(std::io::Error) -> PipelineError {
        let path = path.as_ref().to_path_buf();
        move |source| PipelineError::Io { path, source }
    }
}

impl From<EngineError> for PipelineError {
    fn from(e: EngineError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<GramError> for PipelineError {
    fn from(e: GramError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<RdmError> for PipelineError {
    fn from(e: RdmError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<ClusterError> for PipelineError {
    fn from(e: ClusterError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<StatsError> for PipelineError {
    fn from(e: StatsError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<InfoError> for PipelineError {
    fn from(e: InfoError) -> Self {
        match e {
            InfoError::Quadrature(_) => PipelineError::Numerical(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<SynthesisError> for PipelineError {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::InvalidConfig(_) | SynthesisError::TargetCount { .. } => {
                PipelineError::Config(e.to_string())
            }
            SynthesisError::NonFiniteStart => PipelineError::Numerical(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Data(e.to_string())
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Data("x".into()).exit_code(), 3);
        assert_eq!(PipelineError::Numerical("x".into()).exit_code(), 4);
        assert_eq!(PipelineError::from(InfoError::Quadrature("q".into())).exit_code(), 4);
    }
}
