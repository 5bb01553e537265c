use std::path::{Path, PathBuf};

use pcgc::geometry::GeometryError;
use pcgc::learned_codec::CodecError;
use pcgc::metrics::MetricsError;
use pcgc::octree_codec::OctreeError;

/// Failures of a command, grouped by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or flag combinations. Exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, missing or unsuitable input. Exit code 2.
    #[error("{0}")]
    Data(String),
    /// Damaged files or a stream that belongs to another model. Exit code 3.
    #[error("{0}")]
    Corrupt(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Corrupt(_) => 3,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }

    /// Prefixes the message with the file it concerns.
    pub fn at(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{p}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{p}: {m}")),
            CliError::Corrupt(m) => CliError::Corrupt(format!("{p}: {m}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Format(_) | CodecError::Corrupt(_) | CodecError::ModelMismatch { .. } => {
                CliError::Corrupt(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<OctreeError> for CliError {
    fn from(e: OctreeError) -> Self {
        match e {
            OctreeError::Format(_) | OctreeError::Corrupt(_) => CliError::Corrupt(e.to_string()),
            OctreeError::Argument(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Expands each argument as a glob; arguments without matches are kept as
/// literal paths so that a missing file reports a clear error later.
pub fn expand_inputs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for pat in patterns {
        let paths =
            glob::glob(pat).map_err(|e| CliError::Usage(format!("bad pattern {pat:?}: {e}")))?;
        let mut matched: Vec<PathBuf> = paths.filter_map(|p| p.ok()).collect();
        if matched.is_empty() {
            matched.push(PathBuf::from(pat));
        }
        matched.sort();
        out.extend(matched);
    }
    Ok(out)
}
