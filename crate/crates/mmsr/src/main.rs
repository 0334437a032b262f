use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmsr::config::RunConfig;
use mmsr::error::{AppError, AppResult};
use mmsr::io::read_json;
use mmsr::stages::{self, Workspace};
use mmsr_core::dataset::SynthSpec;

/// Multi-modal sequential recommendation over modality-enriched sequence
/// graphs.
#[derive(Debug, Parser)]
#[command(name = "mmsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load (or synthesize), filter and split interactions.
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Synthetic dataset spec (JSON) to generate instead of loading files.
        #[arg(long)]
        synth: Option<PathBuf>,
    },
    /// Fit autoencoders and modality codebooks.
    Quantize {
        #[command(flatten)]
        common: Common,
    },
    /// Train the graph model.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the trained model on the test points.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Also export per-node gate weights.
        #[arg(long)]
        beta: bool,
    },
    /// Train and evaluate the ten ablation variants.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Missing-modality sweep over the trained model.
    Robust {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep codebook size c and codes per item k.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every stochastic stage.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Work directory for all artifacts.
    #[arg(long, default_value = "mmsr-out")]
    out: PathBuf,
    /// Metric cut-off; repeatable.
    #[arg(long = "k")]
    ks: Vec<u32>,
}

impl Common {
    fn resolve(&self) -> AppResult<(Workspace, RunConfig)> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.set_seed(s);
        }
        if !self.ks.is_empty() {
            cfg.ks = self.ks.clone();
        }
        cfg.validate()?;
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| AppError::Runtime(format!("thread pool: {e}")))?;
        }
        Ok((Workspace::new(&self.out), cfg))
    }
}

fn run(cli: Cli) -> AppResult<String> {
    match cli.command {
        Command::Prepare { common, synth } => {
            let (ws, cfg) = common.resolve()?;
            let spec = match synth {
                Some(p) => {
                    let mut spec: SynthSpec = read_json(&p)?;
                    if let Some(s) = common.seed {
                        spec.seed = s;
                    }
                    Some(spec)
                }
                None => None,
            };
            stages::prepare(&ws, &cfg, spec.as_ref())
        }
        Command::Quantize { common } => {
            let (ws, cfg) = common.resolve()?;
            stages::quantize_stage(&ws, &cfg)
        }
        Command::Train { common } => {
            let (ws, cfg) = common.resolve()?;
            stages::train_stage(&ws, &cfg)
        }
        Command::Eval { common, beta } => {
            let (ws, cfg) = common.resolve()?;
            stages::eval_stage(&ws, &cfg, beta)
        }
        Command::Ablate { common } => {
            let (ws, cfg) = common.resolve()?;
            stages::ablate_stage(&ws, &cfg)
        }
        Command::Robust { common } => {
            let (ws, cfg) = common.resolve()?;
            stages::robust_stage(&ws, &cfg)
        }
        Command::Sweep { common } => {
            let (ws, cfg) = common.resolve()?;
            stages::sweep_stage(&ws, &cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
