// SPDX-License-Identifier: MIT OR Apache-2.0

//! # steer-decode
//!
//! Decoding-time task adaptation with KL-gradient steering vectors.
//!
//! A short warm-start fine-tune turns a pre-trained model `θ` into `φ`. At
//! every decoding step the negated gradient of `KL(p_φ ‖ p_θ)` is projected
//! through the softmax Jacobian into a zero-sum logit delta, restricted to
//! confident tokens, scaled by a strength calibrated offline with a
//! Gauss-Newton step, and added to `φ`'s logits.
//!
//! | module       | contents                                                     |
//! |--------------|--------------------------------------------------------------|
//! | [`dist`]     | softmax, KL divergence and its gradient, Jacobian products   |
//! | [`steering`] | steering vector, confidence mask, logit adjustment           |
//! | [`strength`] | per-token and sequence strength, aggregation, calibration    |
//! | [`toymodel`] | tabular n-gram softmax models, corpora, synthetic tasks      |
//! | [`decode`]   | steered greedy, beam, top-k and top-p decoding               |
//! | [`harness`]  | pipeline config, stages, evaluation and verification         |

pub mod decode;
pub mod dist;
pub mod error;
pub mod harness;
pub mod steering;
pub mod strength;
pub mod toymodel;

pub use error::{Error, Result};
