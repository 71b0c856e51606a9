// SPDX-License-Identifier: MIT OR Apache-2.0

//! Simplex and logit arithmetic.
//!
//! Everything here is a pure function of its inputs. Logarithms are natural.
//! The probability floor in [`Epsilons`] is applied only inside
//! [`kl_divergence`] and [`kl_gradient`]; stored [`ProbVector`]s stay exact.
//!
//! The softmax Jacobian `diag(p) - p pᵀ` is never materialized:
//! [`jacobian_vec_product`] evaluates `p ⊙ (v - ⟨p, v⟩)` in `O(|V|)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ p = 1` accepted by [`ProbVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Numerical constants used across the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Epsilons {
    /// Lower clip for probabilities inside logarithms.
    pub prob_floor: f64,
    /// Added to the Gauss-Newton denominator of the step-size formula.
    pub newton_eps: f64,
    /// Central finite-difference step used by the verification routines.
    pub fd_step: f64,
}

impl Default for Epsilons {
    fn default() -> Self {
        Self {
            prob_floor: 1e-9,
            newton_eps: 1e-12,
            fd_step: 1e-5,
        }
    }
}

impl Epsilons {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prob_floor", self.prob_floor),
            ("newton_eps", self.newton_eps),
            ("fd_step", self.fd_step),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates non-negativity and `|Σ p - 1| ≤ 1e-12`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProbVector("empty".into()));
        }
        if let Some((i, &p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
        {
            return Err(Error::InvalidProbVector(format!("entry {i} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidProbVector(format!("sums to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut v = vec![0.0; n];
        v[index] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl<'de> Deserialize<'de> for ProbVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Self::new(v).map_err(serde::de::Error::custom)
    }
}

/// Pre-softmax scores.
///
/// `f64::NEG_INFINITY` ([`LogitVector::MASKED`]) is the hard-mask sentinel and
/// maps to probability exactly 0. NaN and `+inf` are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub const MASKED: f64 = f64::NEG_INFINITY;

    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::InvalidLogits("empty".into()));
        }
        if let Some((i, &z)) = logits
            .iter()
            .enumerate()
            .find(|(_, z)| z.is_nan() || **z == f64::INFINITY)
        {
            return Err(Error::InvalidLogits(format!("entry {i} is {z}")));
        }
        Ok(Self(logits))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.0[i] == Self::MASKED
    }

    /// Entries with the sentinel replaced by `None`; this is the on-disk form.
    pub fn to_optional(&self) -> Vec<Option<f64>> {
        self.0
            .iter()
            .map(|&z| (z != Self::MASKED).then_some(z))
            .collect()
    }

    pub fn from_optional(values: &[Option<f64>]) -> Result<Self> {
        Self::new(values.iter().map(|z| z.unwrap_or(Self::MASKED)).collect())
    }
}

impl Serialize for LogitVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_optional().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LogitVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<Option<f64>>::deserialize(d)?;
        Self::from_optional(&v).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `log Σ exp(z)` over non-sentinel entries; `None` if all are masked.
pub fn log_sum_exp(z: &[f64]) -> Option<f64> {
    let max = z
        .iter()
        .copied()
        .filter(|&x| x != LogitVector::MASKED)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let s: f64 = z
        .iter()
        .filter(|&&x| x != LogitVector::MASKED)
        .map(|&x| (x - max).exp())
        .sum();
    Some(max + s.ln())
}

/// Max-subtracted softmax. Sentinel entries come out as exactly 0.
pub fn softmax(z: &LogitVector) -> Result<ProbVector> {
    let max =
        z.0.iter()
            .copied()
            .filter(|&x| x != LogitVector::MASKED)
            .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let mut out: Vec<f64> =
        z.0.iter()
            .map(|&x| {
                if x == LogitVector::MASKED {
                    0.0
                } else {
                    (x - max).exp()
                }
            })
            .collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    Ok(ProbVector(out))
}

/// `Σ p log(p / q)` on raw slices, with `q` clipped below by `floor` and
/// `0 · log 0 = 0`. `p` need not be normalized.
pub fn kl_divergence_raw(p: &[f64], q: &[f64], floor: f64) -> Result<f64> {
    Error::check_len(p.len(), q.len())?;
    Ok(p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi.max(floor)).ln())
        .sum())
}

/// `KL(p ‖ q)` with the floor from `eps`.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector, eps: &Epsilons) -> Result<f64> {
    kl_divergence_raw(&p.0, &q.0, eps.prob_floor)
}

/// Gradient of `KL(p_phi ‖ p_theta)` with respect to the coordinates of
/// `p_phi`: `log(p_phi / p_theta) + 1`, both sides clipped at the floor.
pub fn kl_gradient(p_phi: &ProbVector, p_theta: &ProbVector, eps: &Epsilons) -> Result<Vec<f64>> {
    kl_gradient_raw(&p_phi.0, &p_theta.0, eps.prob_floor)
}

pub(crate) fn kl_gradient_raw(p_phi: &[f64], p_theta: &[f64], floor: f64) -> Result<Vec<f64>> {
    Error::check_len(p_phi.len(), p_theta.len())?;
    Ok(p_phi
        .iter()
        .zip(p_theta)
        .map(|(&a, &b)| (a.max(floor) / b.max(floor)).ln() + 1.0)
        .collect())
}

/// `(diag(p) - p pᵀ) v` without forming the matrix.
pub fn jacobian_vec_product(p: &ProbVector, v: &[f64]) -> Result<Vec<f64>> {
    Error::check_len(p.len(), v.len())?;
    let pv: f64 = p.0.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(p.0.iter().zip(v).map(|(&pi, &vi)| pi * (vi - pv)).collect())
}
