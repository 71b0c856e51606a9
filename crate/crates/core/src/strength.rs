// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steering strength.
//!
//! Per token, the strength minimizes the second-order model of
//! `KL(e_y ‖ softmax(z + μ δ̂))` with the Hessian quadratic form replaced by
//! `‖δ̂‖²`:
//!
//! ```text
//! μ* = ⟨e_y - p_phi, δ̂⟩ / (‖δ̂‖² + ε)
//! ```
//!
//! Inner products and norms run over kept coordinates only. A calibration
//! pass teacher-forces gold sequences through both models, collects one
//! [`TokenMuRecord`] per position, and reduces the non-degenerate ones to a
//! single constant `μ̄`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{softmax, Epsilons, ProbVector};
use crate::error::{Error, Result};
use crate::steering::{build_steering, ConstrainedDelta, SteeringConfig};
use crate::toymodel::{check_shared_vocab, Corpus, LanguageModel, TokenId};

/// Fallback strength for records whose steering vector vanishes.
pub const MU_MIN: f64 = 1e-4;

/// Current calibration report schema.
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenMuRecord {
    pub sample_index: usize,
    pub position: usize,
    pub mu_star: f64,
    pub linear_term: f64,
    pub norm_sq: f64,
    pub degenerate: bool,
}

/// Per-token Gauss-Newton strength for gold token `target`.
///
/// Degenerate when `‖δ̂‖² < newton_eps` or when `target` itself was dropped
/// by the confidence mask; either way `mu_star` is [`MU_MIN`].
pub fn mu_token(
    target: TokenId,
    p_phi: &ProbVector,
    delta_hat: &ConstrainedDelta,
    eps: &Epsilons,
) -> Result<TokenMuRecord> {
    Error::check_len(p_phi.len(), delta_hat.len())?;
    let y = target as usize;
    if y >= p_phi.len() {
        return Err(Error::TokenOutOfRange {
            token: target,
            vocab_size: p_phi.len(),
        });
    }
    let (mut linear_term, mut norm_sq) = (0.0, 0.0);
    for (k, d) in delta_hat.kept() {
        let shift = if k == y { 1.0 } else { 0.0 } - p_phi[k];
        linear_term += shift * d;
        norm_sq += d * d;
    }
    let degenerate = norm_sq < eps.newton_eps || !delta_hat.is_kept(y);
    let mu_star = if degenerate {
        MU_MIN
    } else {
        linear_term / (norm_sq + eps.newton_eps)
    };
    Ok(TokenMuRecord {
        sample_index: 0,
        position: 0,
        mu_star,
        linear_term,
        norm_sq,
        degenerate,
    })
}

/// Sequence-level strength `Σ L_t / (Σ D_t + T ε)` from per-position
/// `(linear_term, norm_sq)` pairs.
pub fn mu_sequence(terms: &[(f64, f64)], eps: &Epsilons) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::Empty("sequence terms"));
    }
    let (l, d) = terms
        .iter()
        .fold((0.0, 0.0), |(l, d), (lt, dt)| (l + lt, d + dt));
    Ok(l / (d + terms.len() as f64 * eps.newton_eps))
}

/// How per-token strengths are reduced to `μ̄`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Aggregator {
    #[default]
    Mean,
    Median,
    /// Mean over records within `τ` of the median.
    Trimmed(f64),
}

impl std::fmt::Display for Aggregator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Mean => f.write_str("mean"),
            Self::Median => f.write_str("median"),
            Self::Trimmed(t) => write!(f, "trimmed:{t}"),
        }
    }
}

impl std::str::FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            other => {
                let tau = other
                    .strip_prefix("trimmed:")
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown aggregator `{other}`")))?;
                if tau.is_nan() || tau <= 0.0 {
                    return Err(Error::Config(format!(
                        "trimmed aggregator needs τ > 0, got {tau}"
                    )));
                }
                Ok(Self::Trimmed(tau))
            }
        }
    }
}

impl Serialize for Aggregator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Aggregator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

fn median_of_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Reduces the non-degenerate records to `μ̄`.
pub fn aggregate(records: &[TokenMuRecord], aggregator: Aggregator) -> Result<f64> {
    let mut values: Vec<f64> = records
        .iter()
        .filter(|r| !r.degenerate)
        .map(|r| r.mu_star)
        .collect();
    if values.is_empty() {
        return Err(Error::NoCalibrationSignal);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    match aggregator {
        Aggregator::Mean => Ok(mean(&values)),
        Aggregator::Median => {
            values.sort_by(f64::total_cmp);
            Ok(median_of_sorted(&values))
        }
        Aggregator::Trimmed(tau) => {
            if tau.is_nan() || tau <= 0.0 {
                return Err(Error::InvalidParameter(format!("τ must be > 0, got {tau}")));
            }
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let m = median_of_sorted(&sorted);
            let central: Vec<f64> = values.into_iter().filter(|v| (v - m).abs() < tau).collect();
            // nothing strictly within τ of an even-count median
            if central.is_empty() {
                Ok(m)
            } else {
                Ok(mean(&central))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub version: u32,
    pub aggregator: Aggregator,
    pub mu_bar: f64,
    pub total: usize,
    pub degenerate: usize,
    pub records: Vec<TokenMuRecord>,
}

impl CalibrationReport {
    pub fn from_records(mut records: Vec<TokenMuRecord>, aggregator: Aggregator) -> Result<Self> {
        records.sort_by_key(|r| (r.sample_index, r.position));
        let mu_bar = aggregate(&records, aggregator)?;
        Ok(Self {
            version: REPORT_VERSION,
            aggregator,
            mu_bar,
            total: records.len(),
            degenerate: records.iter().filter(|r| r.degenerate).count(),
            records,
        })
    }

    /// Pretty-printed JSON; float formatting round-trips exactly.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        if report.version != REPORT_VERSION {
            return Err(Error::Version {
                path: path.into(),
                found: report.version,
                expected: REPORT_VERSION,
            });
        }
        if !report.mu_bar.is_finite() {
            return Err(Error::malformed(path, "mu_bar is not finite"));
        }
        Ok(report)
    }
}

/// Teacher-forced records for one gold sequence.
pub fn tokenwise_mu<M: LanguageModel + ?Sized>(
    theta: &M,
    phi: &M,
    sample_index: usize,
    sequence: &[TokenId],
    cfg: &SteeringConfig,
) -> Result<Vec<TokenMuRecord>> {
    let mut out = Vec::with_capacity(sequence.len());
    for (t, &gold) in sequence.iter().enumerate() {
        let prefix = &sequence[..t];
        let p_phi = softmax(&phi.next_logits(prefix)?)?;
        let p_theta = softmax(&theta.next_logits(prefix)?)?;
        let step = build_steering(&p_phi, &p_theta, cfg)?;
        let mut rec = mu_token(gold, &p_phi, &step.delta_hat, &cfg.epsilons)?;
        rec.sample_index = sample_index;
        rec.position = t;
        out.push(rec);
    }
    Ok(out)
}

/// Computes `μ̄` over a labelled calibration corpus.
///
/// Samples are processed in parallel; records are sorted by
/// `(sample_index, position)` before reduction so the result does not depend
/// on scheduling.
pub fn calibrate<M: LanguageModel + Sync + ?Sized>(
    theta: &M,
    phi: &M,
    calib: &Corpus,
    cfg: &SteeringConfig,
    aggregator: Aggregator,
) -> Result<CalibrationReport> {
    cfg.validate()?;
    check_shared_vocab(theta, phi)?;
    if calib.vocab_size != phi.vocab_size() {
        return Err(Error::VocabMismatch {
            left: calib.vocab_size,
            right: phi.vocab_size(),
        });
    }
    if calib.sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCalibrationSet);
    }
    let per_sample: Vec<Vec<TokenMuRecord>> = calib
        .sequences
        .par_iter()
        .enumerate()
        .map(|(i, seq)| tokenwise_mu(theta, phi, i, seq, cfg))
        .collect::<Result<_>>()?;
    CalibrationReport::from_records(per_sample.into_iter().flatten().collect(), aggregator)
}
