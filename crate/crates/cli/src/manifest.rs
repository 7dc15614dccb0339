//! Run manifests: the job that produced a directory plus digests of its files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dccf::experiment::RunConfig;
use dccf::eval::EvalProtocol;
use dccf::exposure::ExposureVariant;
use dccf::synthgen::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Version of the binary that wrote the manifest.
    pub version: String,
    pub job: Job,
    /// SHA-256 of every file the job wrote, keyed by file name.
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Job {
    Synth(SynthJob),
    Split(SplitJob),
    Train(TrainJob),
    Eval(EvalJob),
    Grid(GridJob),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthJob {
    pub preset: String,
    /// Human-readable description of the confounder instantiation.
    pub confounder_form: String,
    pub config: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum SplitStrategy {
    Rand {
        fractions: [f64; 3],
    },
    Skew {
        target_test_fraction: Option<f64>,
        cap: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitJob {
    pub interactions: PathBuf,
    pub threshold: f64,
    pub strategy: SplitStrategy,
    pub seed: u64,
}

/// Where a training run reads its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub interactions: PathBuf,
    pub features: Option<PathBuf>,
    /// Directory holding `train.tsv`, `validation.tsv` and `test.tsv`.
    pub split_dir: PathBuf,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub data: DataPaths,
    pub run: RunConfig,
    /// Exposure checkpoint to load instead of fitting one.
    pub frozen_exposure: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub run_dir: PathBuf,
    /// Digest the model checkpoint must have.
    pub model_sha256: String,
    pub protocol: EvalProtocol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    /// Number of sampled items `n`.
    Samples,
    Exposure,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridJob {
    pub data: DataPaths,
    pub base: RunConfig,
    pub sweep: Sweep,
    pub seeds: Vec<u64>,
    pub n_values: Vec<usize>,
    pub exposures: Vec<ExposureVariant>,
}

impl Manifest {
    pub fn new(job: Job) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            job,
            outputs: BTreeMap::new(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest fields are TOML-representable")
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Hashes `files` (relative to `dir`) and writes the manifest into `dir`.
    pub fn write(mut self, dir: &Path, files: &[&str]) -> CliResult<Self> {
        for &f in files {
            self.outputs.insert(f.to_string(), sha256_file(&dir.join(f))?);
        }
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))?;
        Ok(self)
    }
}

/// Short stable key of a job, used to name grid cells.
pub fn job_key(job: &Job) -> String {
    let text = toml::to_string(&Manifest::new(job.clone())).expect("job serialises");
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifests_round_trip_through_toml() {
        let jobs = vec![
            Job::Synth(SynthJob {
                preset: "sd2".into(),
                confounder_form: "test".into(),
                config: SynthConfig::sd2(3),
            }),
            Job::Split(SplitJob {
                interactions: "a.tsv".into(),
                threshold: 4.0,
                strategy: SplitStrategy::Skew {
                    target_test_fraction: None,
                    cap: 0.9,
                },
                seed: 1,
            }),
            Job::Train(TrainJob {
                data: DataPaths {
                    interactions: "i.tsv".into(),
                    features: Some("f.tsv".into()),
                    split_dir: ".".into(),
                    threshold: 4.0,
                },
                run: RunConfig::default(),
                frozen_exposure: None,
            }),
        ];
        for job in jobs {
            let mut m = Manifest::new(job);
            m.outputs.insert("x".into(), "00".into());
            let back: Manifest = toml::from_str(&m.to_toml()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn job_key_is_stable_and_distinguishes_jobs() {
        let a = Job::Synth(SynthJob {
            preset: "sd1".into(),
            confounder_form: String::new(),
            config: SynthConfig::sd1(0),
        });
        let mut cfg = SynthConfig::sd1(0);
        cfg.seed = 1;
        let b = Job::Synth(SynthJob {
            preset: "sd1".into(),
            confounder_form: String::new(),
            config: cfg,
        });
        assert_eq!(job_key(&a), job_key(&a.clone()));
        assert_ne!(job_key(&a), job_key(&b));
        assert_eq!(job_key(&a).len(), 16);
    }
}
