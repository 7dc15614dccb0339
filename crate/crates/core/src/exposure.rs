//! Exposure weights `P(v|u)`.
//!
//! `Bias` and `Unbias` are backed by a BPR-trained factorisation whose raw
//! score is mapped to (0, 1) with a sigmoid (or used as-is, floored at zero,
//! under [`ScoreMapping::Raw`]). `Unbias` additionally divides by a
//! popularity propensity and clamps the result. `Random` and `Uniform` need
//! no training.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionTable, Pair};
use crate::error::{Error, Result};
use crate::model::mf::{MatrixFactorization, MfConfig};
use crate::model::EpochRecord;
use crate::numerics::{sigmoid, Checkpoint};
use crate::rng::{hashed_unit, stream_key, STREAM_EXPOSURE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureVariant {
    Random,
    Uniform,
    Bias,
    Unbias,
}

impl ExposureVariant {
    pub const ALL: [ExposureVariant; 4] = [
        ExposureVariant::Random,
        ExposureVariant::Uniform,
        ExposureVariant::Bias,
        ExposureVariant::Unbias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExposureVariant::Random => "random",
            ExposureVariant::Uniform => "uniform",
            ExposureVariant::Bias => "bias",
            ExposureVariant::Unbias => "unbias",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, ExposureVariant::Bias | ExposureVariant::Unbias)
    }
}

impl std::str::FromStr for ExposureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExposureVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown exposure variant `{s}`")))
    }
}

/// How raw factorisation scores become weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMapping {
    #[default]
    Sigmoid,
    Raw,
}

impl std::str::FromStr for ScoreMapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(ScoreMapping::Sigmoid),
            "raw" => Ok(ScoreMapping::Raw),
            _ => Err(Error::Config(format!("unknown score mapping `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureConfig {
    pub variant: ExposureVariant,
    pub eta: f64,
    pub weight_cap: f64,
    pub mapping: ScoreMapping,
    pub mf: MfConfig,
}

impl Default for ExposureConfig {
    fn default() -> Self {
        ExposureConfig {
            variant: ExposureVariant::Unbias,
            eta: 0.5,
            weight_cap: 10.0,
            mapping: ScoreMapping::Sigmoid,
            mf: MfConfig::default(),
        }
    }
}

/// `(c_v / max c)^eta` over positive interaction counts. Items without
/// interactions take the smallest nonzero ratio before exponentiation.
pub fn propensity(popularity: &[usize], eta: f64) -> Vec<f64> {
    let max = popularity.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![1.0; popularity.len()];
    }
    let min_nonzero = popularity.iter().copied().filter(|&c| c > 0).min().unwrap_or(max);
    popularity
        .iter()
        .map(|&c| {
            let c = if c == 0 { min_nonzero } else { c };
            (c as f64 / max as f64).powf(eta)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExposureModel {
    pub variant: ExposureVariant,
    pub mapping: ScoreMapping,
    pub eta: f64,
    pub weight_cap: f64,
    pub propensities: Vec<f64>,
    pub mf: Option<MatrixFactorization>,
    n_users: usize,
    n_items: usize,
    /// Key of the Random variant's per-pair draws.
    random_key: u64,
}

impl ExposureModel {
    /// Builds the model for `cfg.variant`, training the factorisation when
    /// the variant needs one. `train_pairs` are the training positives.
    pub fn fit(
        table: &InteractionTable,
        train_pairs: &[Pair],
        cfg: &ExposureConfig,
        seed: u64,
    ) -> Result<(Self, Vec<EpochRecord>)> {
        let (n_users, n_items) = (table.n_users(), table.n_items());
        if train_pairs.is_empty() {
            return Err(Error::Config("exposure model needs at least one training pair".into()));
        }
        let mut popularity = vec![0usize; n_items];
        for &(_, v) in train_pairs {
            popularity[v] += 1;
        }
        let key = stream_key(seed, STREAM_EXPOSURE);
        let mut trace = Vec::new();
        let mf = if cfg.variant.is_learned() {
            let positives = crate::data::SplitResult::by_user(train_pairs, n_users);
            let mut mf = MatrixFactorization::init(n_users, n_items, &cfg.mf, key);
            trace = mf.train(train_pairs, &positives, &cfg.mf, key)?;
            Some(mf)
        } else {
            None
        };
        Ok((
            ExposureModel {
                variant: cfg.variant,
                mapping: cfg.mapping,
                eta: cfg.eta,
                weight_cap: cfg.weight_cap,
                propensities: propensity(&popularity, cfg.eta),
                mf,
                n_users,
                n_items,
                random_key: key,
            },
            trace,
        ))
    }

    /// Model serving fixed weights without a factorisation, for the
    /// `Random` and `Uniform` variants.
    pub fn untrained(variant: ExposureVariant, n_users: usize, n_items: usize, seed: u64) -> Self {
        assert!(!variant.is_learned(), "{} exposure needs training", variant.name());
        ExposureModel {
            variant,
            mapping: ScoreMapping::Sigmoid,
            eta: 0.5,
            weight_cap: 10.0,
            propensities: vec![1.0; n_items],
            mf: None,
            n_users,
            n_items,
            random_key: stream_key(seed, STREAM_EXPOSURE),
        }
    }

    /// Wraps an already trained factorisation.
    pub fn from_parts(
        variant: ExposureVariant,
        mapping: ScoreMapping,
        mf: MatrixFactorization,
        propensities: Vec<f64>,
        eta: f64,
        weight_cap: f64,
    ) -> Self {
        ExposureModel {
            variant,
            mapping,
            eta,
            weight_cap,
            n_users: mf.n_users(),
            n_items: mf.n_items(),
            propensities,
            mf: Some(mf),
            random_key: 0,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    fn mapped(&self, raw: f64) -> f64 {
        match self.mapping {
            ScoreMapping::Sigmoid => sigmoid(raw),
            ScoreMapping::Raw => raw.max(0.0),
        }
    }

    pub fn weight(&self, u: usize, v: usize) -> Result<f64> {
        if u >= self.n_users || v >= self.n_items {
            return Err(Error::Config(format!(
                "exposure index ({u}, {v}) out of range for {}x{}",
                self.n_users, self.n_items
            )));
        }
        Ok(match self.variant {
            ExposureVariant::Random => hashed_unit(self.random_key, u as u64, v as u64),
            ExposureVariant::Uniform => 1.0 / self.n_items as f64,
            ExposureVariant::Bias => self.mapped(self.mf().score(u, v)),
            ExposureVariant::Unbias => {
                let w = self.mapped(self.mf().score(u, v)) / self.propensities[v];
                w.clamp(0.0, self.weight_cap)
            }
        })
    }

    fn mf(&self) -> &MatrixFactorization {
        self.mf.as_ref().expect("learned exposure variants carry a factorisation")
    }

    /// Dense `|U| x |V|` table of weights.
    pub fn weight_matrix(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_users, self.n_items));
        for u in 0..self.n_users {
            let mut row = out.row_mut(u);
            match self.variant {
                ExposureVariant::Bias | ExposureVariant::Unbias => {
                    for (v, s) in self.mf().user_scores(u).into_iter().enumerate() {
                        let mut w = self.mapped(s);
                        if self.variant == ExposureVariant::Unbias {
                            w = (w / self.propensities[v]).clamp(0.0, self.weight_cap);
                        }
                        row[v] = w;
                    }
                }
                _ => {
                    for v in 0..self.n_items {
                        row[v] = self.weight(u, v).expect("in range");
                    }
                }
            }
        }
        out
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.push(
            "exposure.propensity",
            vec![self.propensities.len()],
            self.propensities.clone(),
        );
        if let Some(mf) = &self.mf {
            mf.to_checkpoint("exposure.mf", ckpt);
        }
    }

    /// Inverse of [`ExposureModel::to_checkpoint`]. `seed` must be the one
    /// the model was fitted with; the Random variant's draws are keyed by it.
    pub fn from_checkpoint(
        cfg: &ExposureConfig,
        n_users: usize,
        n_items: usize,
        seed: u64,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        let propensities = ckpt.get("exposure.propensity")?.data.clone();
        if propensities.len() != n_items {
            return Err(Error::Config(format!(
                "exposure checkpoint covers {} items, expected {n_items}",
                propensities.len()
            )));
        }
        let mf = if cfg.variant.is_learned() {
            let mf = MatrixFactorization::from_checkpoint("exposure.mf", ckpt)?;
            if mf.n_users() != n_users || mf.n_items() != n_items {
                return Err(Error::Config(format!(
                    "exposure factorisation is {}x{}, expected {n_users}x{n_items}",
                    mf.n_users(),
                    mf.n_items()
                )));
            }
            Some(mf)
        } else {
            None
        };
        Ok(ExposureModel {
            variant: cfg.variant,
            mapping: cfg.mapping,
            eta: cfg.eta,
            weight_cap: cfg.weight_cap,
            propensities,
            mf,
            n_users,
            n_items,
            random_key: stream_key(seed, STREAM_EXPOSURE),
        })
    }
}
