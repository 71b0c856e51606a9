// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end pipeline: config, stages, evaluation, and numerical checks.

pub mod config;
pub mod eval;
pub mod stages;
pub mod verify;

pub use config::{CalibrationSection, DecodeSection, Paths, PipelineConfig};
pub use eval::{evaluate, EvalSummary, SeedEval, VariantMetrics};
pub use stages::{
    calibrate_stage, decode_stage, eval_stage, generate, resolve_mu, run_pipeline, run_seeds,
    train_base, warmstart, DecodeOptions,
};
pub use verify::{verify_first_order, verify_mu_oracle, FirstOrderReport, MuOracleReport};
