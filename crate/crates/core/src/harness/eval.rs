// SPDX-License-Identifier: MIT OR Apache-2.0

//! Teacher-forced comparison of the warm-started model with and without
//! steering on the task test split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{decode_step, DecodeConfig};
use crate::dist::{kl_divergence, softmax, Epsilons, ProbVector};
use crate::error::Result;
use crate::toymodel::{Corpus, LanguageModel, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    /// Fraction of positions where the argmax equals the gold token.
    pub accuracy: f64,
    /// Mean `KL(e_gold ‖ p)`, i.e. token NLL with probabilities floored.
    pub mean_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: u64,
    pub mu_bar: f64,
    pub test_tokens: usize,
    /// SHA-256 of the test split both variants were scored on.
    pub test_checksum: String,
    pub baseline_warmstart: VariantMetrics,
    pub svd: VariantMetrics,
    pub delta_accuracy: f64,
    pub delta_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub seeds: Vec<SeedEval>,
}

impl EvalSummary {
    /// Seeds where steering did not lose accuracy.
    pub fn accuracy_wins(&self) -> usize {
        self.seeds
            .iter()
            .filter(|s| s.svd.accuracy >= s.baseline_warmstart.accuracy)
            .count()
    }

    /// Largest relative NLL increase of steering over the baseline.
    pub fn worst_relative_nll(&self) -> f64 {
        self.seeds
            .iter()
            .map(|s| {
                (s.svd.mean_nll - s.baseline_warmstart.mean_nll) / s.baseline_warmstart.mean_nll
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

#[derive(Default, Clone, Copy)]
struct Tally {
    correct: usize,
    nll: f64,
    n: usize,
}

fn score(p: &ProbVector, gold: TokenId, eps: &Epsilons) -> Result<Tally> {
    let target = ProbVector::one_hot(p.len(), gold as usize);
    Ok(Tally {
        correct: usize::from(p.argmax() == gold as usize),
        nll: kl_divergence(&target, p, eps)?,
        n: 1,
    })
}

fn finish(tallies: &[Tally]) -> VariantMetrics {
    // sequential reduction keeps the float sum independent of thread count
    let (c, nll, n) = tallies.iter().fold((0, 0.0, 0), |(c, s, n), t| {
        (c + t.correct, s + t.nll, n + t.n)
    });
    VariantMetrics {
        accuracy: c as f64 / n.max(1) as f64,
        mean_nll: nll / n.max(1) as f64,
    }
}

/// Scores `φ` alone and `φ` steered with `cfg.mu_bar` on every position of
/// `test`, conditioning on the gold prefix.
pub fn evaluate<M: LanguageModel + Sync + ?Sized>(
    theta: &M,
    phi: &M,
    test: &Corpus,
    cfg: &DecodeConfig,
    seed: u64,
) -> Result<SeedEval> {
    cfg.validate()?;
    let eps = cfg.steering.epsilons;
    let per_seq: Vec<(Tally, Tally)> = test
        .sequences
        .par_iter()
        .map(|seq| {
            let (mut base, mut svd) = (Tally::default(), Tally::default());
            for t in 0..seq.len() {
                let ctx = &seq[..t];
                let b = score(&softmax(&phi.next_logits(ctx)?)?, seq[t], &eps)?;
                let s = score(&decode_step(theta, phi, ctx, cfg)?.probs, seq[t], &eps)?;
                base = Tally {
                    correct: base.correct + b.correct,
                    nll: base.nll + b.nll,
                    n: base.n + 1,
                };
                svd = Tally {
                    correct: svd.correct + s.correct,
                    nll: svd.nll + s.nll,
                    n: svd.n + 1,
                };
            }
            Ok((base, svd))
        })
        .collect::<Result<_>>()?;
    let (base, svd): (Vec<Tally>, Vec<Tally>) = per_seq.into_iter().unzip();
    let (baseline_warmstart, svd) = (finish(&base), finish(&svd));
    Ok(SeedEval {
        seed,
        mu_bar: cfg.mu_bar,
        test_tokens: test.num_tokens(),
        test_checksum: test.checksum(),
        delta_accuracy: svd.accuracy - baseline_warmstart.accuracy,
        delta_nll: svd.mean_nll - baseline_warmstart.mean_nll,
        baseline_warmstart,
        svd,
    })
}
