// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use steer_decode::decode::Strategy;
use steer_decode::dist::Epsilons;
use steer_decode::harness::{self, DecodeOptions, PipelineConfig};
use steer_decode::Error;

#[derive(Parser)]
#[command(
    name = "steer-decode",
    version,
    about = "Steered decoding pipeline on tabular softmax models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `steering.alpha`.
    #[arg(long)]
    alpha: Option<f64>,
    /// `greedy`, `beam:<w>`, `top_k:<k>` or `top_p:<p>`.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the synthetic corpora.
    Generate(Common),
    /// Train the base model on the pre-training corpus.
    Train(Common),
    /// Fine-tune the base model on the task training split.
    Warmstart(Common),
    /// Compute per-token strengths and the aggregate on the calibration split.
    Calibrate(Common),
    /// Generate continuations of the test prompts.
    Decode {
        #[command(flatten)]
        common: Common,
        /// Force the steering strength instead of reading the report.
        #[arg(long, allow_negative_numbers = true)]
        mu: Option<f64>,
        /// Decode from the warm-started model without steering.
        #[arg(long, conflicts_with = "mu")]
        no_steer: bool,
        /// Write per-step JSON lines here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score the warm-started model with and without steering.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        mu: Option<f64>,
    },
    /// Run every stage, once per seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds; each gets its own `seed-<n>` directory.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Randomized checks of the steering derivative and strength formulas.
    Verify {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Lib(Error),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Lib(e)
    }
}

fn load(c: &Common) -> Result<PipelineConfig, Error> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(alpha) = c.alpha {
        cfg.steering.alpha = alpha;
    }
    if let Some(s) = &c.strategy {
        cfg.decode.strategy = s.parse::<Strategy>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializes"));
}

fn announce(path: &Path) {
    eprintln!("wrote {}", path.display());
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = load(&c)?;
            harness::generate(&cfg)?;
            announce(&cfg.artifacts_dir());
        }
        Command::Train(c) => {
            let cfg = load(&c)?;
            let trace = harness::train_base(&cfg)?;
            println!("nll {:?}", trace.nll);
            announce(&cfg.resolve(&cfg.paths.theta_model));
        }
        Command::Warmstart(c) => {
            let cfg = load(&c)?;
            let trace = harness::warmstart(&cfg)?;
            println!("nll {:?}", trace.nll);
            announce(&cfg.resolve(&cfg.paths.phi_model));
        }
        Command::Calibrate(c) => {
            let cfg = load(&c)?;
            let r = harness::calibrate_stage(&cfg)?;
            println!(
                "mu_bar {} ({}; {} records, {} degenerate)",
                r.mu_bar, r.aggregator, r.total, r.degenerate
            );
            announce(&cfg.resolve(&cfg.paths.report));
        }
        Command::Decode {
            common,
            mu,
            no_steer,
            trace,
        } => {
            let cfg = load(&common)?;
            let opts = DecodeOptions {
                mu,
                no_steer,
                trace,
            };
            let out = harness::decode_stage(&cfg, &opts)?;
            print!("{out}");
            announce(&cfg.resolve(&cfg.paths.generations));
        }
        Command::Eval { common, mu } => {
            let cfg = load(&common)?;
            print_json(&harness::eval_stage(&cfg, mu)?);
        }
        Command::Run { common, seeds } => {
            let cfg = load(&common)?;
            if seeds.is_empty() {
                print_json(&harness::run_pipeline(&cfg)?);
            } else {
                let s = harness::run_seeds(&cfg, &seeds)?;
                print_json(&s);
                eprintln!(
                    "accuracy not worse in {}/{} seeds; worst relative nll change {:+.4}",
                    s.accuracy_wins(),
                    s.seeds.len(),
                    s.worst_relative_nll()
                );
            }
        }
        Command::Verify { trials, seed } => {
            let fo = harness::verify_first_order(trials, &Epsilons::default(), seed)?;
            let mo = harness::verify_mu_oracle(trials, seed)?;
            print_json(&serde_json::json!({ "first_order": fo, "mu_oracle": mo }));
            if !(fo.passed() && mo.passed()) {
                return Err(Failure::Verify("verification failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(4)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParameter(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
