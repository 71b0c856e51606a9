// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pipeline stages. Each reads its inputs from the artifacts directory,
//! writes exactly one kind of artifact, and is deterministic given the config.
//!
//! `generate` → `train` → `warmstart` → `calibrate` → `decode` / `eval`

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::PipelineConfig;
use super::eval::{evaluate, EvalSummary, SeedEval};
use crate::decode::{decode_baseline, decode_sequence, StepTrace};
use crate::error::{Error, Result};
use crate::strength::{calibrate, CalibrationReport};
use crate::toymodel::{
    make_synthetic_task_with, train, Corpus, CorpusRole, NGramSoftmaxLM, TrainTrace,
};

fn require(path: PathBuf, stage: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact { path, stage })
    }
}

fn read_corpus(cfg: &PipelineConfig, p: &Path, role: CorpusRole) -> Result<Corpus> {
    let path = require(cfg.resolve(p), "generate")?;
    Corpus::read(&path, cfg.task.vocab_size, role)
}

fn load_model(cfg: &PipelineConfig, p: &Path, stage: &'static str) -> Result<NGramSoftmaxLM> {
    let model = NGramSoftmaxLM::load(&require(cfg.resolve(p), stage)?)?;
    if model.vocab_size() != cfg.task.vocab_size {
        return Err(Error::VocabMismatch {
            left: model.vocab_size(),
            right: cfg.task.vocab_size,
        });
    }
    Ok(model)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_artifacts_dir(cfg: &PipelineConfig) -> Result<()> {
    let dir = cfg.artifacts_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir, e))
}

/// Samples the synthetic task and writes the four corpora.
pub fn generate(cfg: &PipelineConfig) -> Result<()> {
    ensure_artifacts_dir(cfg)?;
    let task = make_synthetic_task_with(cfg.seed, &cfg.task)?;
    task.pretrain
        .write(&cfg.resolve(&cfg.paths.pretrain_corpus))?;
    task.task_train.write(&cfg.resolve(&cfg.paths.task_train))?;
    task.task_calib.write(&cfg.resolve(&cfg.paths.task_calib))?;
    task.task_test.write(&cfg.resolve(&cfg.paths.task_test))?;
    Ok(())
}

/// Trains the base model `θ` from an all-zero table.
pub fn train_base(cfg: &PipelineConfig) -> Result<TrainTrace> {
    let corpus = read_corpus(cfg, &cfg.paths.pretrain_corpus, CorpusRole::Pretrain)?;
    let mut theta = NGramSoftmaxLM::new(cfg.task.vocab_size, cfg.task.order)?;
    let trace = train(&mut theta, &corpus, &cfg.pretrain_config())?;
    theta.save(&cfg.resolve(&cfg.paths.theta_model))?;
    Ok(trace)
}

/// Fine-tunes a copy of `θ` on the task training split to get `φ`.
pub fn warmstart(cfg: &PipelineConfig) -> Result<TrainTrace> {
    let mut phi = load_model(cfg, &cfg.paths.theta_model, "train")?;
    let corpus = read_corpus(cfg, &cfg.paths.task_train, CorpusRole::TaskTrain)?;
    let trace = train(&mut phi, &corpus, &cfg.warmstart_config())?;
    phi.save(&cfg.resolve(&cfg.paths.phi_model))?;
    Ok(trace)
}

fn load_pair(cfg: &PipelineConfig) -> Result<(NGramSoftmaxLM, NGramSoftmaxLM)> {
    Ok((
        load_model(cfg, &cfg.paths.theta_model, "train")?,
        load_model(cfg, &cfg.paths.phi_model, "warmstart")?,
    ))
}

pub fn calibrate_stage(cfg: &PipelineConfig) -> Result<CalibrationReport> {
    let (theta, phi) = load_pair(cfg)?;
    let calib = read_corpus(cfg, &cfg.paths.task_calib, CorpusRole::TaskCalib)?;
    let report = calibrate(
        &theta,
        &phi,
        &calib,
        &cfg.steering,
        cfg.calibration.aggregator,
    )?;
    report.write(&cfg.resolve(&cfg.paths.report))?;
    Ok(report)
}

/// `μ̄` from the calibration report, unless forced.
pub fn resolve_mu(cfg: &PipelineConfig, forced: Option<f64>) -> Result<f64> {
    match forced {
        Some(mu) if mu.is_finite() => Ok(mu),
        Some(mu) => Err(Error::Config(format!("--mu must be finite, got {mu}"))),
        None => {
            let path = require(cfg.resolve(&cfg.paths.report), "calibrate")?;
            Ok(CalibrationReport::read(&path)?.mu_bar)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DecodeOptions {
    pub mu: Option<f64>,
    /// Decode from `φ` with the steering code path bypassed entirely.
    pub no_steer: bool,
    pub trace: Option<PathBuf>,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    prompt: usize,
    #[serde(flatten)]
    step: &'a StepTrace,
}

/// Generates a continuation for the prompt of every test sequence and writes
/// one line of space-separated token ids per prompt.
pub fn decode_stage(cfg: &PipelineConfig, opts: &DecodeOptions) -> Result<String> {
    let (theta, phi) = load_pair(cfg)?;
    let test = read_corpus(cfg, &cfg.paths.task_test, CorpusRole::TaskTest)?;
    let mu = if opts.no_steer {
        0.0
    } else {
        resolve_mu(cfg, opts.mu)?
    };
    let dcfg = cfg.decode_config(mu);
    let mut out = String::new();
    let mut trace = String::new();
    for (i, seq) in test.sequences.iter().enumerate() {
        let prompt = &seq[..cfg.decode.prompt_len.min(seq.len())];
        let g = if opts.no_steer {
            decode_baseline(&phi, prompt, &dcfg)?
        } else {
            decode_sequence(&theta, &phi, prompt, &dcfg)?
        };
        let line: Vec<String> = g.tokens.iter().map(u32::to_string).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
        if opts.trace.is_some() {
            for step in &g.per_step {
                let l = TraceLine { prompt: i, step };
                writeln!(
                    trace,
                    "{}",
                    serde_json::to_string(&l).expect("trace serializes")
                )
                .unwrap();
            }
        }
    }
    write_text(&cfg.resolve(&cfg.paths.generations), &out)?;
    if let Some(path) = &opts.trace {
        write_text(path, &trace)?;
    }
    Ok(out)
}

pub fn eval_stage(cfg: &PipelineConfig, mu: Option<f64>) -> Result<EvalSummary> {
    let (theta, phi) = load_pair(cfg)?;
    let test = read_corpus(cfg, &cfg.paths.task_test, CorpusRole::TaskTest)?;
    let dcfg = cfg.decode_config(resolve_mu(cfg, mu)?);
    let summary = EvalSummary {
        seeds: vec![evaluate(&theta, &phi, &test, &dcfg, cfg.seed)?],
    };
    write_text(&cfg.resolve(&cfg.paths.eval_summary), &summary.to_json())?;
    Ok(summary)
}

/// All stages in order for the configured seed.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<SeedEval> {
    generate(cfg)?;
    train_base(cfg)?;
    warmstart(cfg)?;
    calibrate_stage(cfg)?;
    decode_stage(cfg, &DecodeOptions::default())?;
    let mut summary = eval_stage(cfg, None)?;
    Ok(summary.seeds.remove(0))
}

/// Runs the whole pipeline once per seed, each in `<artifacts>/seed-<n>`.
pub fn run_seeds(cfg: &PipelineConfig, seeds: &[u64]) -> Result<EvalSummary> {
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        c.artifacts = cfg.artifacts.join(format!("seed-{seed}"));
        out.push(run_pipeline(&c)?);
    }
    let summary = EvalSummary { seeds: out };
    ensure_artifacts_dir(cfg)?;
    write_text(&cfg.resolve(&cfg.paths.eval_summary), &summary.to_json())?;
    Ok(summary)
}
