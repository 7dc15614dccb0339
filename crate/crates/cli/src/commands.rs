//! Sub-command bodies. Each `run_*` executes a [`Job`] into an output
//! directory and writes the manifest last, so a directory with a manifest is
//! complete.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dccf::data::{load_interactions, load_item_features, rand_split, skew_split, InteractionTable, ItemFeatureTable, SplitResult};
use dccf::eval::{EvalProtocol, ReportRecord};
use dccf::experiment::{train_model_with, RunConfig, Trained};
use dccf::exposure::ExposureModel;
use dccf::model::EpochRecord;
use dccf::numerics::Checkpoint;
use dccf::synthgen::{generate_world, sample_dataset, ConfounderKind};
use dccf::Execution;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::manifest::{
    job_key, sha256_file, DataPaths, EvalJob, GridJob, Job, Manifest, SplitJob, SplitStrategy, Sweep, SynthJob,
    TrainJob, MANIFEST_FILE,
};

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const FEATURES_FILE: &str = "features.tsv";
pub const SPLIT_FILES: [&str; 3] = ["train.tsv", "validation.tsv", "test.tsv"];
pub const MODEL_FILE: &str = "model.ckpt";
pub const EXPOSURE_FILE: &str = "exposure.ckpt";
pub const LOSS_FILE: &str = "loss.jsonl";
pub const EXPOSURE_LOSS_FILE: &str = "exposure_loss.jsonl";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const PER_USER_FILE: &str = "per_user.tsv";
pub const GRID_FILE: &str = "grid.jsonl";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Absolute form of an input path, so manifests replay from any directory.
pub fn absolute(path: &Path) -> CliResult<PathBuf> {
    fs::canonicalize(path).map_err(|e| CliError::io(path, e))
}

pub fn execute(job: &Job, out: &Path, exec: Execution) -> CliResult<Manifest> {
    create_dir(out)?;
    match job {
        Job::Synth(j) => run_synth(j, out, exec),
        Job::Split(j) => run_split(j, out),
        Job::Train(j) => run_train(j, out, exec),
        Job::Eval(j) => run_eval(j, out, exec),
        Job::Grid(j) => run_grid(j, out, exec),
    }
}

pub fn confounder_form(kind: ConfounderKind) -> String {
    let who = match kind {
        ConfounderKind::Personal => "per-user draw",
        ConfounderKind::Global => "single draw shared by all users",
    };
    format!("c(u,v) = <z, r_v> with z a {who} and r_v a random item projection, normalised to unit std")
}

fn run_synth(job: &SynthJob, out: &Path, exec: Execution) -> CliResult<Manifest> {
    let world = generate_world(&job.config)?;
    let data = sample_dataset(&world, exec)?;
    data.table.write_tsv(&out.join(INTERACTIONS_FILE))?;
    data.features.write_tsv(&out.join(FEATURES_FILE), &data.table)?;
    data.split.write_tsv(out, &data.table)?;
    let mut files = vec![INTERACTIONS_FILE, FEATURES_FILE];
    files.extend(SPLIT_FILES);
    Manifest::new(Job::Synth(job.clone())).write(out, &files)
}

fn run_split(job: &SplitJob, out: &Path) -> CliResult<Manifest> {
    let table = load_interactions(&job.interactions, job.threshold)?;
    let split = match &job.strategy {
        SplitStrategy::Rand { fractions } => rand_split(&table, *fractions, job.seed)?,
        SplitStrategy::Skew {
            target_test_fraction,
            cap,
        } => skew_split(&table, *target_test_fraction, *cap, job.seed)?,
    };
    if !split.is_partition_of(&table) {
        return Err(CliError::Data("split is not a partition of the positives".into()));
    }
    split.write_tsv(out, &table)?;
    Manifest::new(Job::Split(job.clone())).write(out, &SPLIT_FILES)
}

pub struct LoadedData {
    pub table: InteractionTable,
    pub features: Option<ItemFeatureTable>,
    pub split: SplitResult,
}

pub fn load_data(paths: &DataPaths) -> CliResult<LoadedData> {
    let table = load_interactions(&paths.interactions, paths.threshold)?;
    let features = match &paths.features {
        Some(p) => Some(load_item_features(p, &table)?),
        None => None,
    };
    let split = SplitResult::read_tsv(&paths.split_dir, &table)?;
    Ok(LoadedData { table, features, split })
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("plain records serialise");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> CliResult<()> {
    ckpt.write(path).map_err(|e| CliError::io(path, e))
}

fn run_train(job: &TrainJob, out: &Path, exec: Execution) -> CliResult<Manifest> {
    let data = load_data(&job.data)?;
    if data.split.train.is_empty() {
        return Err(CliError::Data("training split is empty".into()));
    }
    let frozen = match &job.frozen_exposure {
        Some(p) => {
            let ckpt = Checkpoint::read(p)?;
            Some(ExposureModel::from_checkpoint(
                &job.run.exposure,
                data.table.n_users(),
                data.table.n_items(),
                job.run.train.seed,
                &ckpt,
            )?)
        }
        None => None,
    };
    let outcome = train_model_with(&data.table, data.features.as_ref(), &data.split, &job.run, frozen, exec)?;
    write_checkpoint(&outcome.model.to_checkpoint(), &out.join(MODEL_FILE))?;
    write_jsonl(&out.join(LOSS_FILE), &outcome.trace)?;
    let mut files = vec![MODEL_FILE];
    if let Some(e) = &outcome.exposure {
        let mut ckpt = Checkpoint::default();
        e.to_checkpoint(&mut ckpt);
        write_checkpoint(&ckpt, &out.join(EXPOSURE_FILE))?;
        write_jsonl::<EpochRecord>(&out.join(EXPOSURE_LOSS_FILE), &outcome.exposure_trace)?;
        files.push(EXPOSURE_FILE);
    }
    // Loss traces carry wall-clock times, so they are not digested.
    Manifest::new(Job::Train(job.clone())).write(out, &files)
}

/// Reads a training directory's manifest and checks its model digest.
pub fn load_trained(run_dir: &Path, expected_sha: Option<&str>) -> CliResult<(TrainJob, Trained)> {
    let manifest = Manifest::read(&run_dir.join(MANIFEST_FILE))?;
    let Job::Train(job) = manifest.job else {
        return Err(CliError::Data(format!("{} is not a training run", run_dir.display())));
    };
    let model_path = run_dir.join(MODEL_FILE);
    let actual = sha256_file(&model_path)?;
    let recorded = manifest
        .outputs
        .get(MODEL_FILE)
        .ok_or_else(|| CliError::Data("manifest lists no model checkpoint".into()))?;
    if &actual != recorded || expected_sha.is_some_and(|e| e != actual) {
        return Err(CliError::Data(format!(
            "{} does not match its manifest digest",
            model_path.display()
        )));
    }
    let ckpt = Checkpoint::read(&model_path)?;
    let model = Trained::from_checkpoint(&job.run, &ckpt)?;
    Ok((job, model))
}

fn run_eval(job: &EvalJob, out: &Path, exec: Execution) -> CliResult<Manifest> {
    let (train, model) = load_trained(&job.run_dir, Some(&job.model_sha256))?;
    let data = load_data(&train.data)?;
    let report = model.evaluate(&data.table, &data.split.test, &job.protocol, exec)?;
    let record = report_record(&train.run, &job.protocol, &report);
    write_jsonl(&out.join(METRICS_FILE), &[record])?;
    report.write_user_tsv(&out.join(PER_USER_FILE), &data.table)?;
    Manifest::new(Job::Eval(job.clone())).write(out, &[METRICS_FILE, PER_USER_FILE])
}

fn report_record(run: &RunConfig, protocol: &EvalProtocol, report: &dccf::eval::MetricsReport) -> ReportRecord {
    let exposure = if run.model.variant().is_some() {
        run.exposure.variant.name()
    } else {
        "none"
    };
    ReportRecord {
        model: run.model.name().to_string(),
        exposure: exposure.to_string(),
        split: "test".to_string(),
        k: protocol.k,
        n_negatives: protocol.n_negatives,
        seed: protocol.seed,
        n_users: report.n_users(),
        ndcg: report.mean_ndcg,
        recall: report.mean_recall,
        precision: report.mean_precision,
    }
}

/// One line of `grid.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct GridRecord {
    pub cell: String,
    pub seed: u64,
    pub model: String,
    pub exposure: String,
    pub n_samples: usize,
    pub ndcg: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Expands a grid into per-cell training jobs, in output order.
pub fn grid_cells(job: &GridJob) -> Vec<TrainJob> {
    let exposures = match job.sweep {
        Sweep::Samples => vec![job.base.exposure.variant],
        Sweep::Exposure | Sweep::Both => job.exposures.clone(),
    };
    let ns = match job.sweep {
        Sweep::Exposure => vec![job.base.dccf.n_sampled_items],
        Sweep::Samples | Sweep::Both => job.n_values.clone(),
    };
    let mut cells = Vec::new();
    for &seed in &job.seeds {
        for &e in &exposures {
            for &n in &ns {
                let mut run = job.base.clone();
                run.exposure.variant = e;
                run.dccf.n_sampled_items = n;
                run.train.seed = seed;
                run.eval.seed = seed;
                cells.push(TrainJob {
                    data: job.data.clone(),
                    run,
                    frozen_exposure: None,
                });
            }
        }
    }
    cells
}

/// Metrics of a finished cell, or `None` if the cell must be (re)run.
fn finished_cell(dir: &Path, job: &TrainJob) -> Option<ReportRecord> {
    let train = Manifest::read(&dir.join(MANIFEST_FILE)).ok()?;
    if train.job != Job::Train(job.clone()) {
        return None;
    }
    let eval_dir = dir.join("eval");
    Manifest::read(&eval_dir.join(MANIFEST_FILE)).ok()?;
    let text = fs::read_to_string(eval_dir.join(METRICS_FILE)).ok()?;
    serde_json::from_str(text.lines().next()?).ok()
}

fn run_grid(job: &GridJob, out: &Path, exec: Execution) -> CliResult<Manifest> {
    let cells_dir = out.join("cells");
    let mut records = Vec::new();
    for cell in grid_cells(job) {
        let key = job_key(&Job::Train(cell.clone()));
        let dir = cells_dir.join(&key);
        let metrics = match finished_cell(&dir, &cell) {
            Some(m) => {
                eprintln!("cell {key}: done, skipping");
                m
            }
            None => {
                eprintln!(
                    "cell {key}: seed {} exposure {} n {}",
                    cell.run.train.seed,
                    cell.run.exposure.variant.name(),
                    cell.run.dccf.n_sampled_items
                );
                create_dir(&dir)?;
                let trained = run_train(&cell, &dir, exec)?;
                let eval = EvalJob {
                    run_dir: dir.clone(),
                    model_sha256: trained.outputs[MODEL_FILE].clone(),
                    protocol: cell.run.eval,
                };
                let eval_dir = dir.join("eval");
                create_dir(&eval_dir)?;
                run_eval(&eval, &eval_dir, exec)?;
                finished_cell(&dir, &cell).ok_or_else(|| CliError::Data(format!("cell {key} left no metrics")))?
            }
        };
        records.push(GridRecord {
            cell: key,
            seed: cell.run.train.seed,
            model: metrics.model,
            exposure: metrics.exposure,
            n_samples: cell.run.dccf.n_sampled_items,
            ndcg: metrics.ndcg,
            recall: metrics.recall,
            precision: metrics.precision,
        });
    }
    write_jsonl(&out.join(GRID_FILE), &records)?;
    Manifest::new(Job::Grid(job.clone())).write(out, &[GRID_FILE])
}

/// Prints a one-line summary of a manifest's outputs.
pub fn summarize(out: &Path, manifest: &Manifest) {
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "wrote {} ({} files)", out.display(), manifest.outputs.len());
}
