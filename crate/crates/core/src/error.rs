// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors produced by the math layer, the toy models, and the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two vectors that must share a vocabulary have different lengths.
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    /// Every logit is the hard-mask sentinel, so there is nothing to normalize.
    #[error("empty support: every logit is masked")]
    EmptySupport,

    #[error("invalid probability vector: {0}")]
    InvalidProbVector(String),

    #[error("invalid logit vector: {0}")]
    InvalidLogits(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("token id {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },

    #[error("vocabulary mismatch: {left} vs {right}")]
    VocabMismatch { left: usize, right: usize },

    /// Every calibration record was degenerate.
    #[error("no calibration signal: all token records are degenerate")]
    NoCalibrationSignal,

    #[error("empty calibration set")]
    EmptyCalibrationSet,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: checksum mismatch (file is corrupt or truncated)")]
    Checksum { path: PathBuf },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: malformed file: {reason}")]
    Malformed { path: PathBuf, reason: String },

    /// A pipeline stage was run before the stage that produces its inputs.
    #[error("missing artifact {path}: run `{stage}` first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Self::LengthMismatch { expected, found })
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
