// SPDX-License-Identifier: MIT OR Apache-2.0

//! Token corpora and their line-delimited file format.
//!
//! One sequence per line, token ids separated by single spaces. Lines
//! starting with `#` are comments; the writer emits a header comment of the
//! form `# corpus role=<role> vocab_size=<n>` which the reader checks when
//! present.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TokenId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusRole {
    Pretrain,
    TaskTrain,
    TaskCalib,
    TaskTest,
}

impl CorpusRole {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pretrain => "pretrain",
            Self::TaskTrain => "task_train",
            Self::TaskCalib => "task_calib",
            Self::TaskTest => "task_test",
        }
    }
}

impl std::str::FromStr for CorpusRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Self::Pretrain),
            "task_train" => Ok(Self::TaskTrain),
            "task_calib" => Ok(Self::TaskCalib),
            "task_test" => Ok(Self::TaskTest),
            other => Err(Error::Config(format!("unknown corpus role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sequences: Vec<Vec<TokenId>>,
    pub vocab_size: usize,
    pub role: CorpusRole,
}

impl Corpus {
    pub fn new(sequences: Vec<Vec<TokenId>>, vocab_size: usize, role: CorpusRole) -> Result<Self> {
        let corpus = Self {
            sequences,
            vocab_size,
            role,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        for &t in self.sequences.iter().flatten() {
            if t as usize >= self.vocab_size {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    vocab_size: self.vocab_size,
                });
            }
        }
        Ok(())
    }

    pub fn num_tokens(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# corpus role={} vocab_size={}\n",
            self.role.as_str(),
            self.vocab_size
        );
        for seq in &self.sequences {
            for (i, t) in seq.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{t}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the serialized text, hex encoded.
    pub fn checksum(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().fold(
            String::with_capacity(64),
            |mut s, b| {
                write!(s, "{b:02x}").unwrap();
                s
            },
        )
    }

    pub fn parse(text: &str, vocab_size: usize, role: CorpusRole, path: &Path) -> Result<Self> {
        let mut sequences = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                for field in comment.split_whitespace() {
                    if let Some(v) = field.strip_prefix("vocab_size=") {
                        let declared: usize = v.parse().map_err(|_| {
                            Error::malformed(path, format!("line {}: bad vocab_size", lineno + 1))
                        })?;
                        if declared != vocab_size {
                            return Err(Error::VocabMismatch {
                                left: declared,
                                right: vocab_size,
                            });
                        }
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let seq = line
                .split_whitespace()
                .map(|tok| tok.parse::<TokenId>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::malformed(path, format!("line {}: {e}", lineno + 1)))?;
            sequences.push(seq);
        }
        Self::new(sequences, vocab_size, role).map_err(|e| match e {
            Error::Empty(_) => Error::malformed(path, "no sequences"),
            other => other,
        })
    }

    pub fn read(path: &Path, vocab_size: usize, role: CorpusRole) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, vocab_size, role, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
