// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tabular n-gram softmax language models.
//!
//! An order-`k` model holds one logit row per context of `k` symbols drawn
//! from the vocabulary plus a begin symbol (id `|V|`) used for left padding,
//! so the table has `(|V|+1)^k` rows. Training minimizes mean token NLL; the
//! gradient of a row is `softmax(row) - e_y` summed over its occurrences,
//! which makes the objective convex in each row.

mod corpus;
pub mod format;
mod synthetic;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{kl_divergence, log_sum_exp, softmax, Epsilons, LogitVector, ProbVector};
use crate::error::{Error, Result};

pub use corpus::{Corpus, CorpusRole};
pub use synthetic::{
    make_synthetic_task, make_synthetic_task_with, MarkovChain, SyntheticConfig, SyntheticTask,
};

pub type TokenId = u32;

pub const MAX_VOCAB: usize = 64;
pub const MAX_ORDER: usize = 3;

/// Anything that maps a token prefix to next-token logits.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;
    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector>;
}

pub(crate) fn check_shared_vocab<A, B>(a: &A, b: &B) -> Result<()>
where
    A: LanguageModel + ?Sized,
    B: LanguageModel + ?Sized,
{
    if a.vocab_size() == b.vocab_size() {
        Ok(())
    } else {
        Err(Error::VocabMismatch {
            left: a.vocab_size(),
            right: b.vocab_size(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramSoftmaxLM {
    order: usize,
    vocab_size: usize,
    table: Vec<f64>,
}

impl NGramSoftmaxLM {
    /// All-zero table: uniform next-token distribution everywhere.
    pub fn new(vocab_size: usize, order: usize) -> Result<Self> {
        if !(2..=MAX_VOCAB).contains(&vocab_size) {
            return Err(Error::InvalidParameter(format!(
                "vocab_size must be in 2..={MAX_VOCAB}, got {vocab_size}"
            )));
        }
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::InvalidParameter(format!(
                "order must be in 1..={MAX_ORDER}, got {order}"
            )));
        }
        let rows = (vocab_size + 1).pow(order as u32);
        Ok(Self {
            order,
            vocab_size,
            table: vec![0.0; rows * vocab_size],
        })
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(vocab_size: usize, order: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut m = Self::new(vocab_size, order)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in &mut m.table {
            *x = rng.random_range(-scale..=scale);
        }
        Ok(m)
    }

    /// Builds a model whose every row is `logits`.
    pub fn constant(order: usize, logits: &[f64]) -> Result<Self> {
        let mut m = Self::new(logits.len(), order)?;
        for row in m.table.chunks_exact_mut(logits.len()) {
            row.copy_from_slice(logits);
        }
        Ok(m)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn begin_token(&self) -> usize {
        self.vocab_size
    }

    pub fn num_rows(&self) -> usize {
        self.table.len() / self.vocab_size
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.table[index * self.vocab_size..(index + 1) * self.vocab_size]
    }

    pub fn row_mut(&mut self, index: usize) -> &mut [f64] {
        let v = self.vocab_size;
        &mut self.table[index * v..(index + 1) * v]
    }

    /// Row index of the last `k` tokens of `context`, left-padded with the
    /// begin symbol, read as a base-`(|V|+1)` number.
    pub fn context_index(&self, context: &[TokenId]) -> Result<usize> {
        context_index(self.vocab_size, self.order, context)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        format::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        format::load(path)
    }
}

pub(crate) fn context_index(vocab_size: usize, order: usize, context: &[TokenId]) -> Result<usize> {
    let base = vocab_size + 1;
    let tail = &context[context.len().saturating_sub(order)..];
    let mut idx = 0;
    for _ in tail.len()..order {
        idx = idx * base + vocab_size;
    }
    for &t in tail {
        if t as usize >= vocab_size {
            return Err(Error::TokenOutOfRange {
                token: t,
                vocab_size,
            });
        }
        idx = idx * base + t as usize;
    }
    // earlier tokens must be valid too even though they do not index the table
    if let Some(&t) = context[..context.len() - tail.len()]
        .iter()
        .find(|&&t| t as usize >= vocab_size)
    {
        return Err(Error::TokenOutOfRange {
            token: t,
            vocab_size,
        });
    }
    Ok(idx)
}

impl LanguageModel for NGramSoftmaxLM {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<LogitVector> {
        let idx = self.context_index(context)?;
        LogitVector::new(self.row(idx).to_vec())
    }
}

fn check_corpus(model: &NGramSoftmaxLM, corpus: &Corpus) -> Result<()> {
    if corpus.vocab_size != model.vocab_size {
        return Err(Error::VocabMismatch {
            left: corpus.vocab_size,
            right: model.vocab_size,
        });
    }
    corpus.validate()
}

/// Mean over all positions of `-log P(y_t | y_<t)`.
pub fn sequence_nll(model: &NGramSoftmaxLM, corpus: &Corpus) -> Result<f64> {
    check_corpus(model, corpus)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for seq in &corpus.sequences {
        for t in 0..seq.len() {
            let row = model.row(model.context_index(&seq[..t])?);
            let lse = log_sum_exp(row).ok_or(Error::EmptySupport)?;
            total += lse - row[seq[t] as usize];
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("corpus has no tokens"));
    }
    Ok(total / n as f64)
}

/// Mean over all positions of `KL(e_{y_t} ‖ P(· | y_<t))`. Equal to
/// [`sequence_nll`] since the one-hot target has zero entropy.
pub fn mean_one_hot_kl(model: &NGramSoftmaxLM, corpus: &Corpus, eps: &Epsilons) -> Result<f64> {
    check_corpus(model, corpus)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for seq in &corpus.sequences {
        for t in 0..seq.len() {
            let p = softmax(&model.next_logits(&seq[..t])?)?;
            let target = ProbVector::one_hot(model.vocab_size, seq[t] as usize);
            total += kl_divergence(&target, &p, eps)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("corpus has no tokens"));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle of sequence order.
    pub seed: u64,
    pub l2: f64,
    /// Sequences per gradient step; `0` means full batch.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 1,
            seed: 0,
            l2: 0.0,
            batch_size: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // zero is allowed for ablations; negative is not
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning_rate must be finite and ≥ 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be ≥ 1".into()));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "l2 must be ≥ 0, got {}",
                self.l2
            )));
        }
        Ok(())
    }
}

/// Corpus NLL before training followed by the NLL after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub nll: Vec<f64>,
}

/// Accumulates `Σ (softmax(row) - e_y)` over the given sequences into `grad`
/// and returns the number of positions.
fn accumulate_gradient(
    model: &NGramSoftmaxLM,
    sequences: &[&[TokenId]],
    grad: &mut [f64],
    touched: &mut Vec<usize>,
) -> Result<usize> {
    let v = model.vocab_size;
    let mut counts = vec![0usize; model.num_rows()];
    let mut n = 0;
    for seq in sequences {
        for t in 0..seq.len() {
            let r = model.context_index(&seq[..t])?;
            if counts[r] == 0 {
                touched.push(r);
            }
            counts[r] += 1;
            grad[r * v + seq[t] as usize] -= 1.0;
            n += 1;
        }
    }
    for &r in touched.iter() {
        let p = softmax(&LogitVector::new(model.row(r).to_vec())?)?;
        let c = counts[r] as f64;
        for (g, pk) in grad[r * v..(r + 1) * v].iter_mut().zip(p.as_slice()) {
            *g += c * pk;
        }
    }
    Ok(n)
}

/// Gradient of `mean NLL + (l2 / 2)·‖table‖²` with respect to the table.
pub fn nll_gradient(model: &NGramSoftmaxLM, corpus: &Corpus, l2: f64) -> Result<Vec<f64>> {
    check_corpus(model, corpus)?;
    let seqs: Vec<&[TokenId]> = corpus.sequences.iter().map(Vec::as_slice).collect();
    let mut grad = vec![0.0; model.table.len()];
    let n = accumulate_gradient(model, &seqs, &mut grad, &mut Vec::new())?;
    let scale = 1.0 / n.max(1) as f64;
    for (g, w) in grad.iter_mut().zip(&model.table) {
        *g = *g * scale + l2 * w;
    }
    Ok(grad)
}

/// Minibatch gradient descent on mean NLL. Sequence order is reshuffled each
/// epoch from `cfg.seed`, so runs are bit-reproducible.
pub fn train(model: &mut NGramSoftmaxLM, corpus: &Corpus, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    check_corpus(model, corpus)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.sequences.len()).collect();
    let batch = if cfg.batch_size == 0 {
        order.len()
    } else {
        cfg.batch_size
    };
    let mut grad = vec![0.0; model.table.len()];
    let mut touched = Vec::new();
    let mut trace = vec![sequence_nll(model, corpus)?];

    for _ in 0..cfg.epochs {
        if batch < order.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let seqs: Vec<&[TokenId]> = chunk
                .iter()
                .map(|&i| corpus.sequences[i].as_slice())
                .collect();
            touched.clear();
            let n = accumulate_gradient(model, &seqs, &mut grad, &mut touched)?;
            if n == 0 {
                continue;
            }
            let step = cfg.learning_rate / n as f64;
            let v = model.vocab_size;
            for &r in &touched {
                let rows = r * v..(r + 1) * v;
                for (w, g) in model.table[rows.clone()].iter_mut().zip(&mut grad[rows]) {
                    *w -= step * *g;
                    *g = 0.0;
                }
            }
            if cfg.l2 > 0.0 {
                let shrink = cfg.learning_rate * cfg.l2;
                for w in &mut model.table {
                    *w -= shrink * *w;
                }
            }
        }
        trace.push(sequence_nll(model, corpus)?);
    }
    Ok(TrainTrace { nll: trace })
}
