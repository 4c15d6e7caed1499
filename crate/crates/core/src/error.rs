// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, SteerError>;

/// Everything that can go wrong while building, running or measuring a model.
#[derive(Debug, thiserror::Error)]
pub enum SteerError {
    /// A configuration value violates its documented constraints.
    #[error("invalid config: {0}")]
    Config(String),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A token id outside `0..vocab_size`.
    #[error("token id {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },

    /// A hook or sweep references a layer outside `1..=n_layers`.
    #[error("layer {layer} out of range 1..={n_layers}")]
    LayerOutOfRange { layer: usize, n_layers: usize },

    /// Malformed input to an operation (empty lists, mixed concepts, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// A numeric quantity is undefined for the given data.
    #[error("undefined: {0}")]
    Undefined(String),

    /// Binary file with a bad magic number or unsupported version.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Binary file whose body does not match its header.
    #[error("shape mismatch in {path}: {reason}")]
    Shape { path: PathBuf, reason: String },

    /// A pipeline stage failed; wraps the underlying error.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<SteerError>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SteerError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a pipeline stage name.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ Self::Stage { .. } => already,
            other => Self::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &SteerError {
        match self {
            Self::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by configuration rather than data.
    pub fn is_config(&self) -> bool {
        matches!(self.root(), Self::Config(_))
    }
}

/// Extension for tagging results with a stage name.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
