// SPDX-License-Identifier: MIT OR Apache-2.0

//! Steered autoregressive decoding.
//!
//! Each step recomputes `p_θ`, `p_φ`, the steering vector, and the confidence
//! mask for the current context, adjusts `φ`'s logits by `μ̄·δ̂`, and only then
//! hands the adjusted distribution to the selection strategy. Beam search
//! steers every hypothesis with its own context.
//!
//! Sampling strategies walk candidates in descending probability order (ties
//! by lowest id) with one uniform draw per step from a ChaCha8 stream seeded
//! by [`DecodeConfig::seed`]. Zero-probability tokens are never candidates.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{softmax, LogitVector, ProbVector};
use crate::error::{Error, Result};
use crate::steering::{apply_steering, build_steering, ConstrainedDelta, SteeringConfig};
use crate::toymodel::{check_shared_vocab, LanguageModel, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Strategy {
    #[default]
    Greedy,
    Beam {
        width: usize,
    },
    TopK {
        k: usize,
    },
    TopP {
        p: f64,
    },
}

impl Strategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Strategy::Greedy => Ok(()),
            Strategy::Beam { width } if width >= 1 => Ok(()),
            Strategy::TopK { k } if k >= 1 => Ok(()),
            Strategy::TopP { p } if p > 0.0 && p <= 1.0 => Ok(()),
            other => Err(Error::Config(format!(
                "invalid strategy parameters: {other}"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Greedy => f.write_str("greedy"),
            Self::Beam { width } => write!(f, "beam:{width}"),
            Self::TopK { k } => write!(f, "top_k:{k}"),
            Self::TopP { p } => write!(f, "top_p:{p}"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    /// `greedy`, `beam:<width>`, `top_k:<k>` or `top_p:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.trim().split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s.trim(), None),
        };
        let need = || {
            param.ok_or_else(|| {
                Error::Config(format!(
                    "strategy `{name}` needs a parameter, e.g. `{name}:4`"
                ))
            })
        };
        let bad = |p: &str| Error::Config(format!("bad parameter `{p}` for strategy `{name}`"));
        let strategy = match name {
            "greedy" if param.is_none() => Self::Greedy,
            "beam" => {
                let p = need()?;
                Self::Beam {
                    width: p.parse().map_err(|_| bad(p))?,
                }
            }
            "top_k" => {
                let p = need()?;
                Self::TopK {
                    k: p.parse().map_err(|_| bad(p))?,
                }
            }
            "top_p" => {
                let p = need()?;
                Self::TopP {
                    p: p.parse().map_err(|_| bad(p))?,
                }
            }
            _ => return Err(Error::Config(format!("unknown strategy `{s}`"))),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub mu_bar: f64,
    pub steering: SteeringConfig,
    /// Maximum number of generated tokens, prompt excluded.
    pub max_len: usize,
    pub seed: u64,
    pub stop_token: Option<TokenId>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            mu_bar: 0.0,
            steering: SteeringConfig::default(),
            max_len: 16,
            seed: 0,
            stop_token: None,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.steering.validate()?;
        if !self.mu_bar.is_finite() {
            return Err(Error::Config(format!(
                "mu_bar must be finite, got {}",
                self.mu_bar
            )));
        }
        Ok(())
    }
}

/// The adjusted distribution for one context and what went into it.
#[derive(Debug, Clone)]
pub struct SteeredStep {
    pub z_phi: LogitVector,
    pub delta_hat: ConstrainedDelta,
    pub adjusted: LogitVector,
    pub probs: ProbVector,
}

/// One line of the decode trace.
#[derive(Debug, Clone, Serialize)]
pub struct StepTrace {
    pub position: usize,
    pub z_phi: LogitVector,
    /// `null` entries are hard-masked.
    pub delta_hat: ConstrainedDelta,
    /// `μ̄·δ̂` as added to the logits; `null` where the logit became `-inf`.
    pub applied: Vec<Option<f64>>,
    pub chosen: TokenId,
    pub chosen_prob: f64,
}

impl StepTrace {
    fn new(position: usize, step: &SteeredStep, mu_bar: f64, chosen: TokenId) -> Self {
        let applied = step
            .delta_hat
            .entries
            .iter()
            .map(|e| e.value().map(|d| mu_bar * d))
            .collect();
        Self {
            position,
            z_phi: step.z_phi.clone(),
            delta_hat: step.delta_hat.clone(),
            applied,
            chosen,
            chosen_prob: step.probs[chosen as usize],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerationResult {
    /// Generated tokens, prompt excluded.
    pub tokens: Vec<TokenId>,
    pub per_step: Vec<StepTrace>,
}

impl GenerationResult {
    /// One JSON object per step, newline-terminated.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for step in &self.per_step {
            out.push_str(&serde_json::to_string(step).expect("trace serializes"));
            out.push('\n');
        }
        out
    }
}

/// Steered next-token distribution for `context`.
pub fn decode_step<M: LanguageModel + ?Sized>(
    theta: &M,
    phi: &M,
    context: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<SteeredStep> {
    check_shared_vocab(theta, phi)?;
    let z_phi = phi.next_logits(context)?;
    let p_phi = softmax(&z_phi)?;
    let p_theta = softmax(&theta.next_logits(context)?)?;
    let delta_hat = build_steering(&p_phi, &p_theta, &cfg.steering)?.delta_hat;
    let (adjusted, probs) = apply_steering(&z_phi, &delta_hat, cfg.mu_bar)?;
    Ok(SteeredStep {
        z_phi,
        delta_hat,
        adjusted,
        probs,
    })
}

/// Plain `softmax(z_φ)` with no steering computation at all.
fn baseline_step<M: LanguageModel + ?Sized>(phi: &M, context: &[TokenId]) -> Result<SteeredStep> {
    let z_phi = phi.next_logits(context)?;
    let probs = softmax(&z_phi)?;
    Ok(SteeredStep {
        delta_hat: ConstrainedDelta::unmasked(&vec![0.0; z_phi.len()]),
        adjusted: z_phi.clone(),
        z_phi,
        probs,
    })
}

/// Non-zero entries, most probable first, ties by lowest id.
fn ranked(p: &ProbVector) -> Vec<(usize, f64)> {
    let mut c: Vec<(usize, f64)> = p
        .as_slice()
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, x)| *x > 0.0)
        .collect();
    c.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    c
}

fn draw(candidates: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = candidates.iter().map(|c| c.1).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &(i, w) in candidates {
        acc += w;
        if u < acc {
            return i;
        }
    }
    candidates
        .last()
        .expect("softmax leaves a non-zero entry")
        .0
}

pub fn select_greedy(p: &ProbVector) -> TokenId {
    p.argmax() as TokenId
}

pub fn sample_top_k(p: &ProbVector, k: usize, rng: &mut ChaCha8Rng) -> TokenId {
    let c = ranked(p);
    draw(&c[..k.min(c.len())], rng) as TokenId
}

/// Samples from the smallest prefix of the ranked distribution whose mass
/// reaches `top_p`, or the whole support if rounding keeps it short.
pub fn sample_top_p(p: &ProbVector, top_p: f64, rng: &mut ChaCha8Rng) -> TokenId {
    let c = ranked(p);
    let mut acc = 0.0;
    let mut end = c.len();
    for (n, &(_, w)) in c.iter().enumerate() {
        acc += w;
        if acc >= top_p {
            end = n + 1;
            break;
        }
    }
    draw(&c[..end], rng) as TokenId
}

/// Samples from the whole distribution.
pub fn sample_full(p: &ProbVector, rng: &mut ChaCha8Rng) -> TokenId {
    draw(&ranked(p), rng) as TokenId
}

fn run<F>(prompt: &[TokenId], cfg: &DecodeConfig, step: F) -> Result<GenerationResult>
where
    F: Fn(&[TokenId]) -> Result<SteeredStep>,
{
    cfg.validate()?;
    if let Strategy::Beam { width } = cfg.strategy {
        return run_beam(prompt, cfg, width, step);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut context = prompt.to_vec();
    let mut result = GenerationResult {
        tokens: Vec::new(),
        per_step: Vec::new(),
    };
    for t in 0..cfg.max_len {
        let s = step(&context)?;
        let chosen = match cfg.strategy {
            Strategy::Greedy => select_greedy(&s.probs),
            Strategy::TopK { k } => sample_top_k(&s.probs, k, &mut rng),
            Strategy::TopP { p } => sample_top_p(&s.probs, p, &mut rng),
            Strategy::Beam { .. } => unreachable!(),
        };
        result
            .per_step
            .push(StepTrace::new(t, &s, cfg.mu_bar, chosen));
        result.tokens.push(chosen);
        context.push(chosen);
        if cfg.stop_token == Some(chosen) {
            break;
        }
    }
    Ok(result)
}

struct Hypothesis {
    tokens: Vec<TokenId>,
    score: f64,
    finished: bool,
    trace: Vec<StepTrace>,
}

/// Descending score, then lexicographically smallest sequence.
fn beam_order(a: (&[TokenId], f64), b: (&[TokenId], f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

fn run_beam<F>(
    prompt: &[TokenId],
    cfg: &DecodeConfig,
    width: usize,
    step: F,
) -> Result<GenerationResult>
where
    F: Fn(&[TokenId]) -> Result<SteeredStep>,
{
    let mut beams = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        finished: false,
        trace: Vec::new(),
    }];
    for t in 0..cfg.max_len {
        if beams.iter().all(|h| h.finished) {
            break;
        }
        // (parent, extension): extension None carries a finished hypothesis over
        let mut candidates: Vec<(usize, Option<TokenId>, Vec<TokenId>, f64)> = Vec::new();
        let mut steps = Vec::with_capacity(beams.len());
        for (b, h) in beams.iter().enumerate() {
            if h.finished {
                candidates.push((b, None, h.tokens.clone(), h.score));
                steps.push(None);
                continue;
            }
            let context: Vec<TokenId> = prompt.iter().chain(&h.tokens).copied().collect();
            let s = step(&context)?;
            for (tok, &p) in s.probs.as_slice().iter().enumerate() {
                if p > 0.0 {
                    let mut seq = h.tokens.clone();
                    seq.push(tok as TokenId);
                    candidates.push((b, Some(tok as TokenId), seq, h.score + p.ln()));
                }
            }
            steps.push(Some(s));
        }
        candidates.sort_by(|a, b| beam_order((&a.2, a.3), (&b.2, b.3)));
        candidates.truncate(width);
        beams = candidates
            .into_iter()
            .map(|(b, ext, tokens, score)| {
                let parent = &beams[b];
                let mut trace = parent.trace.clone();
                let finished = match ext {
                    None => true,
                    Some(tok) => {
                        let s = steps[b].as_ref().expect("expanded beam has a step");
                        trace.push(StepTrace::new(t, s, cfg.mu_bar, tok));
                        cfg.stop_token == Some(tok)
                    }
                };
                Hypothesis {
                    tokens,
                    score,
                    finished,
                    trace,
                }
            })
            .collect();
    }
    let best = beams
        .into_iter()
        .min_by(|a, b| beam_order((&a.tokens, a.score), (&b.tokens, b.score)))
        .expect("beam is never empty");
    Ok(GenerationResult {
        tokens: best.tokens,
        per_step: best.trace,
    })
}

/// Steered generation from `prompt`.
pub fn decode_sequence<M: LanguageModel + ?Sized>(
    theta: &M,
    phi: &M,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<GenerationResult> {
    check_shared_vocab(theta, phi)?;
    run(prompt, cfg, |ctx| decode_step(theta, phi, ctx, cfg))
}

/// Generation from `φ` alone, bypassing every steering computation. Only
/// `strategy`, `max_len`, `seed`, and `stop_token` of `cfg` are used.
pub fn decode_baseline<M: LanguageModel + ?Sized>(
    phi: &M,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<GenerationResult> {
    run(prompt, cfg, |ctx| baseline_step(phi, ctx))
}
