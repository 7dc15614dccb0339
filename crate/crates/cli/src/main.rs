//! `dccf`: synthesise data, split, train, evaluate and sweep.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.

mod commands;
mod error;
mod manifest;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dccf::exposure::ExposureVariant;
use dccf::synthgen::SynthConfig;
use dccf::Execution;

use commands::{absolute, execute, summarize, FEATURES_FILE, INTERACTIONS_FILE, MODEL_FILE};
use error::{CliError, CliResult};
use manifest::{DataPaths, EvalJob, GridJob, Job, Manifest, SplitJob, SplitStrategy, Sweep, SynthJob, TrainJob};
use settings::{load_config, ModelOpts};

#[derive(Debug, Parser)]
#[command(name = "dccf", version, about = "Deconfounded collaborative filtering experiments")]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (interactions, features, split).
    Synth(SynthArgs),
    /// Split an interaction file into train/validation/test.
    Split(SplitArgs),
    /// Train the exposure model and a recommender.
    Train(TrainArgs),
    /// Evaluate a trained model on its test split.
    Eval(EvalArgs),
    /// Sweep sampled-item counts and/or exposure variants.
    Grid(GridArgs),
    /// Re-run the job recorded in a manifest into a new directory.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Sd1,
    Sd2,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "sd1")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scale of the item effect that bypasses the features.
    #[arg(long)]
    direct_effect: Option<f64>,
    #[arg(long)]
    confounder_strength: Option<f64>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    /// Output directory [default: <preset>-seed<seed>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyName {
    Rand,
    Skew,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    interactions: PathBuf,
    /// Ratings at or above this are positive.
    #[arg(long, default_value_t = 4.0)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "rand")]
    strategy: StrategyName,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// RAND train/validation/test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.1, 0.2])]
    fractions: Vec<f64>,
    /// SKEW: rescale inclusion probabilities to this expected test share.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// SKEW: maximum per-pair test probability.
    #[arg(long, default_value_t = 0.9)]
    cap: f64,
    /// Output directory [default: next to the interactions file].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory with interactions.tsv, features.tsv and the split files.
    #[arg(long, default_value = ".")]
    data: PathBuf,
    /// Directory with train/validation/test.tsv [default: --data].
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 4.0)]
    threshold: f64,
}

impl DataArgs {
    fn paths(&self) -> CliResult<DataPaths> {
        let features = self.data.join(FEATURES_FILE);
        Ok(DataPaths {
            interactions: absolute(&self.data.join(INTERACTIONS_FILE))?,
            features: if features.exists() {
                Some(absolute(&features)?)
            } else {
                None
            },
            split_dir: absolute(self.split.as_deref().unwrap_or(&self.data))?,
            threshold: self.threshold,
        })
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// TOML file of model options; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    opts: ModelOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use this exposure checkpoint instead of fitting one.
    #[arg(long)]
    frozen_exposure: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Training output directory.
    #[arg(long, default_value = "run")]
    run: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    negatives: usize,
    /// Seed of the negative draws [default: the training seed].
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: <run>/eval].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    opts: ModelOpts,
    #[arg(long, value_enum, default_value = "both")]
    sweep: Sweep,
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 5, 10, 20])]
    n_values: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = ExposureVariant::ALL.map(|e| e.name().to_string()))]
    exposures: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    negatives: usize,
    #[arg(long, default_value = "grid")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn merged_opts(opts: &ModelOpts, config: Option<&Path>) -> CliResult<ModelOpts> {
    let file = match config {
        Some(p) => load_config(p)?,
        None => ModelOpts::default(),
    };
    Ok(opts.clone().over(file))
}

fn build_job(command: &Command) -> CliResult<(Job, PathBuf)> {
    Ok(match command {
        Command::Synth(a) => {
            let (mut config, name) = match a.preset {
                Preset::Sd1 => (SynthConfig::sd1(a.seed), "sd1"),
                Preset::Sd2 => (SynthConfig::sd2(a.seed), "sd2"),
            };
            if let Some(d) = a.direct_effect {
                config.direct_effect_scale = d;
            }
            if let Some(g) = a.confounder_strength {
                config.confounder_strength = g;
            }
            if let Some(u) = a.users {
                config.n_users = u;
            }
            if let Some(i) = a.items {
                config.n_items = i;
            }
            let out = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("{name}-seed{}", a.seed)));
            let job = SynthJob {
                preset: name.to_string(),
                confounder_form: commands::confounder_form(config.confounder_kind),
                config,
            };
            (Job::Synth(job), out)
        }
        Command::Split(a) => {
            let strategy = match a.strategy {
                StrategyName::Rand => {
                    let fractions: [f64; 3] = a
                        .fractions
                        .as_slice()
                        .try_into()
                        .map_err(|_| CliError::Usage("--fractions takes three values".into()))?;
                    SplitStrategy::Rand { fractions }
                }
                StrategyName::Skew => SplitStrategy::Skew {
                    target_test_fraction: a.test_fraction,
                    cap: a.cap,
                },
            };
            let interactions = absolute(&a.interactions)?;
            let out = a
                .out
                .clone()
                .unwrap_or_else(|| interactions.parent().map(Path::to_path_buf).unwrap_or_default());
            let job = SplitJob {
                interactions,
                threshold: a.threshold,
                strategy,
                seed: a.seed,
            };
            (Job::Split(job), out)
        }
        Command::Train(a) => {
            let opts = merged_opts(&a.opts, a.config.as_deref())?;
            let job = TrainJob {
                data: a.data.paths()?,
                run: opts.to_run_config(a.seed),
                frozen_exposure: a.frozen_exposure.as_deref().map(absolute).transpose()?,
            };
            (Job::Train(job), a.out.clone())
        }
        Command::Eval(a) => {
            let run_dir = absolute(&a.run)?;
            let (train, _) = commands::load_trained(&run_dir, None)?;
            let model_sha256 = manifest::sha256_file(&run_dir.join(MODEL_FILE))?;
            let protocol = dccf::eval::EvalProtocol {
                k: a.k,
                n_negatives: a.negatives,
                seed: a.seed.unwrap_or(train.run.train.seed),
            };
            protocol.validate()?;
            let out = a.out.clone().unwrap_or_else(|| run_dir.join("eval"));
            let job = EvalJob {
                run_dir,
                model_sha256,
                protocol,
            };
            (Job::Eval(job), out)
        }
        Command::Grid(a) => {
            let opts = merged_opts(&a.opts, a.config.as_deref())?;
            let mut base = opts.to_run_config(0);
            base.eval.k = a.k;
            base.eval.n_negatives = a.negatives;
            base.eval.validate()?;
            if base.model.variant().is_none() {
                return Err(CliError::Usage("grids sweep estimator settings; choose a dccf model".into()));
            }
            let exposures = a
                .exposures
                .iter()
                .map(|e| e.parse::<ExposureVariant>())
                .collect::<Result<Vec<_>, _>>()?;
            let job = GridJob {
                data: a.data.paths()?,
                base,
                sweep: a.sweep,
                seeds: a.seeds.clone(),
                n_values: a.n_values.clone(),
                exposures,
            };
            (Job::Grid(job), a.out.clone())
        }
        Command::Replay(a) => (Manifest::read(&a.manifest)?.job, a.out.clone()),
    })
}

fn run(cli: &Cli) -> CliResult<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let (job, out) = build_job(&cli.command)?;
    let manifest = execute(&job, &out, exec)?;
    summarize(&out, &manifest);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
