// SPDX-License-Identifier: MIT OR Apache-2.0

//! Task-aware steering vectors.
//!
//! The raw vector is the negated gradient of `KL(p_phi ‖ p_theta)` pushed
//! through the softmax Jacobian at `p_phi`, which makes it a zero-sum logit
//! delta. A confidence mask then keeps only tokens whose warm-started
//! probability is at least `alpha` times the top probability.
//!
//! Masked tokens are handled in one of two ways, see [`PenaltyMode`]. In
//! hard mode the sentinel is written into the adjusted logit directly rather
//! than multiplied by the strength, so a negative strength still suppresses
//! the token instead of producing `+inf`.

use serde::{Deserialize, Serialize};

use crate::dist::{
    argmax, jacobian_vec_product, kl_gradient, softmax, Epsilons, LogitVector, ProbVector,
};
use crate::error::{Error, Result};

/// Zero-sum logit-space direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    pub delta: Vec<f64>,
}

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.delta.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMask {
    pub keep: Vec<bool>,
    pub alpha: f64,
    pub argmax_token: usize,
}

impl ConfidenceMask {
    pub fn all(n: usize, argmax_token: usize) -> Self {
        Self {
            keep: vec![true; n],
            alpha: f64::MIN_POSITIVE,
            argmax_token,
        }
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }
}

/// What a dropped token's delta becomes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum PenaltyMode {
    /// Dropped tokens get logit `-inf` (probability exactly 0).
    #[default]
    HardNegInf,
    /// Dropped tokens get delta `λ`, scaled by the strength like any other entry.
    Constant(f64),
}

impl std::fmt::Display for PenaltyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::HardNegInf => f.write_str("-inf"),
            Self::Constant(l) => write!(f, "{l}"),
        }
    }
}

impl std::str::FromStr for PenaltyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "-inf" | "hard" | "hard_neg_inf" => Ok(Self::HardNegInf),
            other => {
                let l: f64 = other
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid penalty `{other}`")))?;
                if !l.is_finite() {
                    return Err(Error::Config(format!(
                        "constant penalty must be finite, got {l}"
                    )));
                }
                Ok(Self::Constant(l))
            }
        }
    }
}

// In config files the penalty is either the string "-inf" or a number.
impl Serialize for PenaltyMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::HardNegInf => s.serialize_str("-inf"),
            Self::Constant(l) => s.serialize_f64(*l),
        }
    }
}

impl<'de> Deserialize<'de> for PenaltyMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(l) if l.is_finite() => Ok(Self::Constant(l)),
            Repr::Num(l) => Err(serde::de::Error::custom(format!(
                "constant penalty must be finite, got {l}"
            ))),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringConfig {
    pub alpha: f64,
    pub penalty: PenaltyMode,
    pub epsilons: Epsilons,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            penalty: PenaltyMode::HardNegInf,
            epsilons: Epsilons::default(),
        }
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if let PenaltyMode::Constant(l) = self.penalty {
            if !l.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "penalty λ must be finite, got {l}"
                )));
            }
        }
        self.epsilons.validate()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "alpha must be in (0, 1], got {alpha}"
        )))
    }
}

/// One coordinate of a constrained delta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaEntry {
    Kept(f64),
    /// Dropped by the mask, carries the constant penalty `λ`.
    Penalty(f64),
    /// Dropped by the mask in hard mode.
    Masked,
}

impl DeltaEntry {
    pub fn is_kept(self) -> bool {
        matches!(self, Self::Kept(_))
    }

    /// The finite value, if any.
    pub fn value(self) -> Option<f64> {
        match self {
            Self::Kept(v) | Self::Penalty(v) => Some(v),
            Self::Masked => None,
        }
    }
}

/// Steering vector after the confidence constraint, `δ̂`.
///
/// Serialized as a list of numbers with `null` for hard-masked entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedDelta {
    pub entries: Vec<DeltaEntry>,
}

impl ConstrainedDelta {
    /// Every entry kept.
    pub fn unmasked(delta: &[f64]) -> Self {
        Self {
            entries: delta.iter().map(|&d| DeltaEntry::Kept(d)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.entries[i].is_kept()
    }

    /// Largest absolute finite entry.
    pub fn max_abs_finite(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| e.value())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `(index, value)` over kept coordinates only.
    pub fn kept(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| match e {
                DeltaEntry::Kept(v) => Some((i, *v)),
                _ => None,
            })
    }

    /// Multiplies every finite entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| match *e {
                    DeltaEntry::Kept(v) => DeltaEntry::Kept(v * factor),
                    DeltaEntry::Penalty(v) => DeltaEntry::Penalty(v * factor),
                    DeltaEntry::Masked => DeltaEntry::Masked,
                })
                .collect(),
        }
    }

    pub fn to_optional(&self) -> Vec<Option<f64>> {
        self.entries.iter().map(|e| e.value()).collect()
    }
}

impl Serialize for ConstrainedDelta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_optional().serialize(s)
    }
}

/// `J(p_phi) · (-∇ KL(p_phi ‖ p_theta))`.
pub fn raw_steering_vector(
    p_phi: &ProbVector,
    p_theta: &ProbVector,
    eps: &Epsilons,
) -> Result<SteeringVector> {
    let g: Vec<f64> = kl_gradient(p_phi, p_theta, eps)?
        .into_iter()
        .map(|x| -x)
        .collect();
    project_to_logits(p_phi, &g)
}

/// Projects an arbitrary probability-space direction through the softmax
/// Jacobian. Constant components vanish.
pub fn project_to_logits(p_phi: &ProbVector, direction: &[f64]) -> Result<SteeringVector> {
    Ok(SteeringVector {
        delta: jacobian_vec_product(p_phi, direction)?,
    })
}

/// Keeps `y` iff `p_phi(y) ≥ alpha · max p_phi`.
pub fn confidence_mask(p_phi: &ProbVector, alpha: f64) -> Result<ConfidenceMask> {
    check_alpha(alpha)?;
    let top = argmax(p_phi.as_slice());
    let threshold = alpha * p_phi[top];
    let mut keep: Vec<bool> = p_phi.as_slice().iter().map(|&p| p >= threshold).collect();
    // alpha * p can round above p when alpha == 1
    keep[top] = true;
    Ok(ConfidenceMask {
        keep,
        alpha,
        argmax_token: top,
    })
}

pub fn constrain(
    delta: &SteeringVector,
    mask: &ConfidenceMask,
    cfg: &SteeringConfig,
) -> Result<ConstrainedDelta> {
    Error::check_len(delta.len(), mask.keep.len())?;
    let entries = delta
        .delta
        .iter()
        .zip(&mask.keep)
        .map(|(&d, &keep)| match (keep, cfg.penalty) {
            (true, _) => DeltaEntry::Kept(d),
            (false, PenaltyMode::HardNegInf) => DeltaEntry::Masked,
            (false, PenaltyMode::Constant(l)) => DeltaEntry::Penalty(l),
        })
        .collect();
    Ok(ConstrainedDelta { entries })
}

/// `ẑ = z + μ·δ̂` followed by softmax. Masked entries become the sentinel
/// regardless of `mu`; sentinel inputs stay sentinel.
pub fn apply_steering(
    z_phi: &LogitVector,
    delta_hat: &ConstrainedDelta,
    mu: f64,
) -> Result<(LogitVector, ProbVector)> {
    Error::check_len(z_phi.len(), delta_hat.len())?;
    if !mu.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "steering strength must be finite, got {mu}"
        )));
    }
    let adjusted: Vec<f64> = z_phi
        .as_slice()
        .iter()
        .zip(&delta_hat.entries)
        .map(|(&z, e)| match e.value() {
            _ if z == LogitVector::MASKED => LogitVector::MASKED,
            Some(d) => z + mu * d,
            None => LogitVector::MASKED,
        })
        .collect();
    let adjusted = LogitVector::new(adjusted)?;
    let probs = softmax(&adjusted)?;
    Ok((adjusted, probs))
}

/// The full per-context construction: raw vector, mask, and constrained form.
#[derive(Debug, Clone)]
pub struct SteeringStep {
    pub delta: SteeringVector,
    pub mask: ConfidenceMask,
    pub delta_hat: ConstrainedDelta,
}

pub fn build_steering(
    p_phi: &ProbVector,
    p_theta: &ProbVector,
    cfg: &SteeringConfig,
) -> Result<SteeringStep> {
    let delta = raw_steering_vector(p_phi, p_theta, &cfg.epsilons)?;
    let mask = confidence_mask(p_phi, cfg.alpha)?;
    let delta_hat = constrain(&delta, &mask, cfg)?;
    Ok(SteeringStep {
        delta,
        mask,
        delta_hat,
    })
}
