// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded synthetic tasks.
//!
//! The pre-training corpus comes from a broad Markov chain whose transition
//! logits are uniform in `[-pretrain_logit_scale, pretrain_logit_scale]`. The
//! task chain shares the vocabulary and context layout but puts all of its
//! mass on a few tokens per context, chosen independently of the pre-training
//! chain. Task data is split 80/20 into warm-start and calibration sets by a
//! seeded shuffle; the test set is sampled separately.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{context_index, Corpus, CorpusRole, TokenId, MAX_ORDER, MAX_VOCAB};
use crate::error::{Error, Result};

/// Fraction of the task pool used for warm-start training.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub vocab_size: usize,
    pub order: usize,
    pub pretrain_sequences: usize,
    /// Size of the task pool before the train/calibration split.
    pub task_sequences: usize,
    pub test_sequences: usize,
    pub sequence_len: usize,
    /// Tokens with non-zero task probability per context.
    pub task_support: usize,
    pub pretrain_logit_scale: f64,
    /// When false the task chain is the pre-training chain.
    pub shift: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8,
            order: 1,
            pretrain_sequences: 400,
            task_sequences: 60,
            test_sequences: 100,
            sequence_len: 12,
            task_support: 3,
            pretrain_logit_scale: 1.0,
            shift: true,
        }
    }
}

impl SyntheticConfig {
    pub fn new(vocab_size: usize, order: usize) -> Self {
        Self {
            vocab_size,
            order,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(2..=MAX_VOCAB).contains(&self.vocab_size) {
            return bad(format!("vocab_size must be in 2..={MAX_VOCAB}"));
        }
        if !(1..=MAX_ORDER).contains(&self.order) {
            return bad(format!("order must be in 1..={MAX_ORDER}"));
        }
        if self.task_support == 0 || self.task_support > self.vocab_size {
            return bad("task_support must be in 1..=vocab_size".into());
        }
        if self.pretrain_sequences == 0 || self.test_sequences == 0 || self.sequence_len == 0 {
            return bad("corpus sizes must be ≥ 1".into());
        }
        if self.task_sequences < 2 {
            return bad("task_sequences must be ≥ 2 to split".into());
        }
        if !(self.pretrain_logit_scale.is_finite() && self.pretrain_logit_scale >= 0.0) {
            return bad("pretrain_logit_scale must be ≥ 0".into());
        }
        Ok(())
    }
}

/// Order-`k` Markov chain over the same context layout as
/// [`NGramSoftmaxLM`](super::NGramSoftmaxLM).
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    pub vocab_size: usize,
    pub order: usize,
    probs: Vec<f64>,
}

impl MarkovChain {
    pub fn num_rows(&self) -> usize {
        self.probs.len() / self.vocab_size
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.probs[index * self.vocab_size..(index + 1) * self.vocab_size]
    }

    pub fn next_probs(&self, context: &[TokenId]) -> Result<&[f64]> {
        Ok(self.row(context_index(self.vocab_size, self.order, context)?))
    }

    fn broad(vocab: usize, order: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let rows = (vocab + 1).pow(order as u32);
        let mut probs = Vec::with_capacity(rows * vocab);
        for _ in 0..rows {
            let w: Vec<f64> = (0..vocab)
                .map(|_| rng.random_range(-scale..=scale).exp())
                .collect();
            let s: f64 = w.iter().sum();
            probs.extend(w.into_iter().map(|x| x / s));
        }
        Self {
            vocab_size: vocab,
            order,
            probs,
        }
    }

    /// Support of `support` random tokens per row with weights in `[1, 4]`,
    /// so the least likely supported token has at least a quarter of the
    /// mass of the most likely one.
    fn sparse(vocab: usize, order: usize, support: usize, rng: &mut ChaCha8Rng) -> Self {
        let rows = (vocab + 1).pow(order as u32);
        let mut probs = vec![0.0; rows * vocab];
        let mut ids: Vec<usize> = (0..vocab).collect();
        for row in probs.chunks_exact_mut(vocab) {
            ids.shuffle(rng);
            let w: Vec<f64> = (0..support)
                .map(|_| 1.0 + 3.0 * rng.random::<f64>())
                .collect();
            let s: f64 = w.iter().sum();
            for (&i, wi) in ids[..support].iter().zip(&w) {
                row[i] = wi / s;
            }
        }
        Self {
            vocab_size: vocab,
            order,
            probs,
        }
    }

    fn sample_token(&self, context: &[TokenId], rng: &mut ChaCha8Rng) -> TokenId {
        let row = self.next_probs(context).expect("sampled ids are in range");
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return i as TokenId;
                }
            }
        }
        last as TokenId
    }

    pub fn sample_sequences(
        &self,
        n: usize,
        len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Vec<TokenId>> {
        (0..n)
            .map(|_| {
                let mut seq = Vec::with_capacity(len);
                for _ in 0..len {
                    let t = self.sample_token(&seq, rng);
                    seq.push(t);
                }
                seq
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub pretrain: Corpus,
    pub task_train: Corpus,
    pub task_calib: Corpus,
    pub task_test: Corpus,
    pub pretrain_chain: MarkovChain,
    pub task_chain: MarkovChain,
}

/// Default-sized task for the given vocabulary and order.
pub fn make_synthetic_task(seed: u64, vocab_size: usize, order: usize) -> Result<SyntheticTask> {
    make_synthetic_task_with(seed, &SyntheticConfig::new(vocab_size, order))
}

pub fn make_synthetic_task_with(seed: u64, cfg: &SyntheticConfig) -> Result<SyntheticTask> {
    cfg.validate()?;
    let (v, k) = (cfg.vocab_size, cfg.order);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pretrain_chain = MarkovChain::broad(v, k, cfg.pretrain_logit_scale, &mut rng);
    let task_chain = if cfg.shift {
        MarkovChain::sparse(v, k, cfg.task_support, &mut rng)
    } else {
        pretrain_chain.clone()
    };

    let pretrain =
        pretrain_chain.sample_sequences(cfg.pretrain_sequences, cfg.sequence_len, &mut rng);
    let mut pool = task_chain.sample_sequences(cfg.task_sequences, cfg.sequence_len, &mut rng);
    let test = task_chain.sample_sequences(cfg.test_sequences, cfg.sequence_len, &mut rng);

    pool.shuffle(&mut rng);
    let n_train = ((pool.len() as f64) * TRAIN_FRACTION).round() as usize;
    let n_train = n_train.clamp(1, pool.len() - 1);
    let calib = pool.split_off(n_train);

    Ok(SyntheticTask {
        pretrain: Corpus::new(pretrain, v, CorpusRole::Pretrain)?,
        task_train: Corpus::new(pool, v, CorpusRole::TaskTrain)?,
        task_calib: Corpus::new(calib, v, CorpusRole::TaskCalib)?,
        task_test: Corpus::new(test, v, CorpusRole::TaskTest)?,
        pretrain_chain,
        task_chain,
    })
}
