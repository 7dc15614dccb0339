//! Synthetic confounded feedback.
//!
//! Generative model:
//!
//! * user latents `a_u` and item latents `b_v`, standard normal;
//! * inherent item features `m_v = F(b_v)` with `F` a small tanh network;
//! * unconfounded preference `s*(u,v) = τ · (g(a_u, m_v) + δ · h(a_u, b_v))`
//!   where `g(a, m) = <a, G(m)>` and `h(a, b) = <a, H(b)>` are tanh networks
//!   and `δ` is the direct-effect scale (0 makes the features a complete
//!   mediator);
//! * confounder `c(u,v) = <c_u, r_v>` with a per-user draw `c_u` (shared by
//!   all users for a global confounder) and a random item projection `r_v`
//!   independent of the features;
//! * training interactions are drawn by softmax over `s* + γ · c`, test
//!   interactions by softmax over `s*` from the items left over.
//!
//! `g`, `h` and `c` are rescaled to unit standard deviation over all pairs,
//! so `τ`, `δ` and `γ` are directly comparable.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionTable, ItemFeatureTable, Pair, SplitResult};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::{substream, STREAM_SAMPLE, STREAM_WORLD};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfounderKind {
    /// Each user draws their own confounder value.
    #[default]
    Personal,
    /// One draw shared by every user.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub train_per_user: usize,
    pub test_per_user: usize,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    /// Softmax sharpness `τ` of the unconfounded preference.
    pub score_scale: f64,
    pub confounder_strength: f64,
    pub confounder_dim: usize,
    pub confounder_kind: ConfounderKind,
    pub direct_effect_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 900,
            n_items: 1000,
            train_per_user: 20,
            test_per_user: 5,
            feature_dim: 16,
            latent_dim: 16,
            hidden: 32,
            score_scale: 2.0,
            confounder_strength: 2.0,
            confounder_dim: 1,
            confounder_kind: ConfounderKind::Personal,
            direct_effect_scale: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Complete mediation.
    pub fn sd1(seed: u64) -> Self {
        SynthConfig {
            seed,
            ..SynthConfig::default()
        }
    }

    /// Weak direct item effect alongside the mediated one.
    pub fn sd2(seed: u64) -> Self {
        SynthConfig {
            seed,
            direct_effect_scale: 0.1,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_users,
            self.n_items,
            self.train_per_user,
            self.test_per_user,
            self.feature_dim,
            self.latent_dim,
            self.hidden,
            self.confounder_dim,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("synthetic sizes must all be positive".into()));
        }
        if self.train_per_user + self.test_per_user > self.n_items {
            return Err(Error::Config(format!(
                "{} train + {} test interactions per user exceed {} items",
                self.train_per_user, self.test_per_user, self.n_items
            )));
        }
        for (name, x) in [
            ("score_scale", self.score_scale),
            ("confounder_strength", self.confounder_strength),
            ("direct_effect_scale", self.direct_effect_scale),
        ] {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Two-layer tanh network `W2 · tanh(W1 x)`, weights normal / sqrt(fan_in).
#[derive(Debug, Clone, PartialEq)]
pub struct TanhNet {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
}

impl TanhNet {
    fn random<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut layer = |fan_in: usize, fan_out: usize| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            Array2::from_shape_simple_fn((fan_out, fan_in), || scale * rng.sample::<f64, _>(StandardNormal))
        };
        TanhNet {
            w1: layer(input, hidden),
            w2: layer(hidden, output),
        }
    }

    /// Applies the network to every row of `x`.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w1.t()).mapv(f64::tanh).dot(&self.w2.t())
    }
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

fn std_dev(values: &Array2<f64>) -> f64 {
    let n = values.len() as f64;
    let mean = values.sum() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        var.sqrt()
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthWorld {
    pub cfg: SynthConfig,
    pub user_latents: Array2<f64>,
    pub item_latents: Array2<f64>,
    pub feature_net: TanhNet,
    pub preference_net: TanhNet,
    pub direct_net: TanhNet,
    /// `c_u`, one row per user.
    pub confounder_draws: Array2<f64>,
    /// `r_v`, one row per item.
    pub confounder_projection: Array2<f64>,
    /// Inherent features `m_v`, one row per item.
    pub features: Array2<f64>,
    mediated: Array2<f64>,
    direct: Array2<f64>,
    confounding: Array2<f64>,
    /// Standard deviations that normalise mediated, direct and confounding parts.
    scales: [f64; 3],
}

/// Builds the world for `cfg`; identical configs give identical worlds.
pub fn generate_world(cfg: &SynthConfig) -> Result<GroundTruthWorld> {
    cfg.validate()?;
    let mut rng = substream(cfg.seed, STREAM_WORLD, 0);
    let (l, h) = (cfg.latent_dim, cfg.hidden);
    let user_latents = normal_matrix(cfg.n_users, l, &mut rng);
    let item_latents = normal_matrix(cfg.n_items, l, &mut rng);
    let feature_net = TanhNet::random(l, h, cfg.feature_dim, &mut rng);
    let preference_net = TanhNet::random(cfg.feature_dim, h, l, &mut rng);
    let direct_net = TanhNet::random(l, h, l, &mut rng);
    let confounder_draws = match cfg.confounder_kind {
        ConfounderKind::Personal => normal_matrix(cfg.n_users, cfg.confounder_dim, &mut rng),
        ConfounderKind::Global => {
            let one = normal_matrix(1, cfg.confounder_dim, &mut rng);
            one.broadcast((cfg.n_users, cfg.confounder_dim))
                .expect("broadcast a single row")
                .to_owned()
        }
    };
    let confounder_projection = normal_matrix(cfg.n_items, cfg.confounder_dim, &mut rng);
    let features = feature_net.apply(&item_latents);
    let mut world = GroundTruthWorld {
        cfg: cfg.clone(),
        user_latents,
        item_latents,
        feature_net,
        preference_net,
        direct_net,
        confounder_draws,
        confounder_projection,
        features,
        mediated: Array2::zeros((0, 0)),
        direct: Array2::zeros((0, 0)),
        confounding: Array2::zeros((0, 0)),
        scales: [1.0; 3],
    };
    world.refresh();
    Ok(world)
}

impl GroundTruthWorld {
    /// Recomputes the score components from the current latents and features.
    fn refresh(&mut self) {
        let mut mediated = self
            .user_latents
            .dot(&self.preference_net.apply(&self.features).t());
        let mut direct = self
            .user_latents
            .dot(&self.direct_net.apply(&self.item_latents).t());
        let mut confounding = self.confounder_draws.dot(&self.confounder_projection.t());
        for (k, m) in [&mut mediated, &mut direct, &mut confounding].into_iter().enumerate() {
            self.scales[k] = std_dev(m);
            let s = self.scales[k];
            m.mapv_inplace(|x| x / s);
        }
        self.mediated = mediated;
        self.direct = direct;
        self.confounding = confounding;
    }

    /// Overwrites item `v`'s features (keeping its latent). The unit-std
    /// normalisers are not recomputed, so other items keep their scores.
    pub fn set_item_features(&mut self, v: usize, m: &[f64]) {
        self.features.row_mut(v).assign(&Array1::from(m.to_vec()));
        let g = self.preference_net.apply(&self.features.select(Axis(0), &[v]));
        let col = self.user_latents.dot(&g.row(0)) / self.scales[0];
        self.mediated.column_mut(v).assign(&col);
    }

    /// Unconfounded preference `s*(u, v)`.
    pub fn true_score(&self, u: usize, v: usize) -> f64 {
        self.cfg.score_scale
            * (self.mediated[[u, v]] + self.cfg.direct_effect_scale * self.direct[[u, v]])
    }

    /// Confounder term `c(u, v)` before the strength factor.
    pub fn confounder(&self, u: usize, v: usize) -> f64 {
        self.confounding[[u, v]]
    }

    /// Training-time score `s*(u, v) + γ c(u, v)`.
    pub fn confounded_score(&self, u: usize, v: usize) -> f64 {
        self.true_score(u, v) + self.cfg.confounder_strength * self.confounding[[u, v]]
    }

    /// Softmax over all items of the user's training-time (`confounded`) or
    /// test-time scores: the distribution of the first draw.
    pub fn selection_distribution(&self, u: usize, confounded: bool) -> Vec<f64> {
        let scores: Vec<f64> = (0..self.cfg.n_items)
            .map(|v| {
                if confounded {
                    self.confounded_score(u, v)
                } else {
                    self.true_score(u, v)
                }
            })
            .collect();
        softmax(&scores)
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Draws `k` items from `pool` without replacement, each step picking from
/// the softmax of `scores` renormalised over the items still in the pool.
/// Selected items are removed from `pool`.
pub fn softmax_without_replacement<R: Rng + ?Sized>(
    scores: &[f64],
    pool: &mut Vec<usize>,
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k.min(pool.len()) {
        let max = pool.iter().map(|&v| scores[v]).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = pool.iter().map(|&v| (scores[v] - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut chosen = pool.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if target < *w {
                chosen = i;
                break;
            }
            target -= w;
        }
        picked.push(pool.swap_remove(chosen));
    }
    picked
}

/// A sampled dataset: table of all positives, item features and the
/// train/test split (validation left empty).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub table: InteractionTable,
    pub features: ItemFeatureTable,
    pub split: SplitResult,
}

pub fn sample_dataset(world: &GroundTruthWorld, exec: Execution) -> Result<SynthDataset> {
    let cfg = &world.cfg;
    let per_user = exec.map_range(cfg.n_users, |u| {
        let mut rng = substream(cfg.seed, STREAM_SAMPLE, u as u64);
        let mut pool: Vec<usize> = (0..cfg.n_items).collect();
        let confounded: Vec<f64> = (0..cfg.n_items).map(|v| world.confounded_score(u, v)).collect();
        let mut train = softmax_without_replacement(&confounded, &mut pool, cfg.train_per_user, &mut rng);
        pool.sort_unstable();
        let clean: Vec<f64> = (0..cfg.n_items).map(|v| world.true_score(u, v)).collect();
        let mut test = softmax_without_replacement(&clean, &mut pool, cfg.test_per_user, &mut rng);
        train.sort_unstable();
        test.sort_unstable();
        (train, test)
    });
    let mut train: Vec<Pair> = Vec::with_capacity(cfg.n_users * cfg.train_per_user);
    let mut test: Vec<Pair> = Vec::with_capacity(cfg.n_users * cfg.test_per_user);
    for (u, (tr, te)) in per_user.into_iter().enumerate() {
        train.extend(tr.into_iter().map(|v| (u, v)));
        test.extend(te.into_iter().map(|v| (u, v)));
    }
    let mut all = train.clone();
    all.extend(&test);
    let table = InteractionTable::from_positive_pairs(cfg.n_users, cfg.n_items, &all)?;
    Ok(SynthDataset {
        table,
        features: ItemFeatureTable::new(world.features.clone())?,
        split: SplitResult {
            train,
            validation: Vec::new(),
            test,
            dropped: Vec::new(),
        },
    })
}
