//! Front-door preference estimator.
//!
//! The conditional preference is `f(u, v', m) = u · MLP([v'; m])` and the
//! estimate of `(u, v)` is
//!
//! ```text
//! y(u, v) = 1/d · Σ_j Σ_{v' ∈ R(u,v)} P(v'|u) · f(u, v', m_j)
//! ```
//!
//! with `R(u,v)` the item itself plus `n` uniformly sampled other items and
//! `m_j` drawn around the item's feature vector. `Ns` keeps only the
//! exposure-weighted term of `v` itself and `Nd` drops the weight as well.
//! Exposure weights and item features are copied in at construction and
//! never updated.

use std::time::Instant;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{sample_negative, EpochRecord};
use crate::data::{ItemFeatureTable, Pair};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::exposure::ExposureModel;
use crate::model::mf::{add_row_l2, tensor_matrix};
use crate::numerics::{
    log_sigmoid, sigmoid, Adam, Checkpoint, Dense, DenseGrad, EmbeddingTable, MlpCache, MlpGrads, MlpParams,
    RowGrads,
};
use crate::rng::{substream, StreamRng, STREAM_INIT, STREAM_SAMPLE, STREAM_SHUFFLE};

/// Pairs per gradient work unit. Fixed so that sequential and parallel
/// runs sum gradients in the same order.
const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Full,
    Ns,
    Nd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DccfConfig {
    pub variant: Variant,
    /// User/item embedding size, also the MLP output size.
    pub dim: usize,
    /// Hidden layer widths of the MLP.
    pub hidden: Vec<usize>,
    pub bias: bool,
    pub final_activation: bool,
    pub n_sampled_items: usize,
    pub n_feature_samples: usize,
    pub sigma_m: f64,
    /// Read `sigma_m` as a standard deviation instead of a variance.
    pub sigma_is_std: bool,
    pub init_std: f64,
}

impl Default for DccfConfig {
    fn default() -> Self {
        DccfConfig {
            variant: Variant::Full,
            dim: 32,
            hidden: vec![64],
            bias: true,
            final_activation: true,
            n_sampled_items: 20,
            n_feature_samples: 2,
            sigma_m: 0.1,
            sigma_is_std: false,
            init_std: 0.1,
        }
    }
}

impl DccfConfig {
    pub fn feature_std(&self) -> f64 {
        if self.sigma_is_std {
            self.sigma_m
        } else {
            self.sigma_m.sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            l2: 1e-5,
            batch_size: 128,
            epochs: 100,
            seed: 0,
        }
    }
}

/// The sampled ingredients of one estimate: items of `R(u,v)` with their
/// exposure weights, and `d` feature vectors (one per row).
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub items: Vec<usize>,
    pub weights: Vec<f64>,
    pub features: Array2<f64>,
}

impl Estimate {
    fn rows(&self) -> usize {
        self.items.len() * self.features.nrows()
    }
}

struct SplitForward {
    /// Item embedding per (estimate, item).
    items: Array2<f64>,
    /// Feature draw per (estimate, draw).
    feats: Array2<f64>,
    /// MLP output per (estimate, draw, item).
    out: Array2<f64>,
    cache: MlpCache,
}

#[derive(Debug, Clone)]
pub struct PairSample {
    pub user: usize,
    pub pos: Estimate,
    pub neg: Estimate,
}

#[derive(Debug, Clone)]
pub struct DccfGrads {
    pub user: RowGrads,
    pub item: RowGrads,
    pub mlp: MlpGrads,
}

impl DccfGrads {
    fn zeros(model: &DccfModel) -> Self {
        DccfGrads {
            user: RowGrads::new(model.cfg.dim),
            item: RowGrads::new(model.cfg.dim),
            mlp: MlpGrads::zeros_like(&model.mlp),
        }
    }

    fn merge(&mut self, other: &DccfGrads) {
        self.user.merge(&other.user);
        self.item.merge(&other.item);
        self.mlp.add_assign(&other.mlp);
    }

    /// Dense gradient in the layout of [`DccfModel::flat_params`].
    pub fn flatten(&self, n_users: usize, n_items: usize) -> Vec<f64> {
        let dim = self.user.dim();
        let mut out = vec![0.0; (n_users + n_items) * dim];
        for (r, g) in self.user.iter() {
            out[r * dim..(r + 1) * dim].copy_from_slice(g);
        }
        for (r, g) in self.item.iter() {
            let base = (n_users + r) * dim;
            out[base..base + dim].copy_from_slice(g);
        }
        out.extend(self.mlp.flatten());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DccfModel {
    pub cfg: DccfConfig,
    pub user: EmbeddingTable,
    pub item: EmbeddingTable,
    pub mlp: MlpParams,
    features: Array2<f64>,
    exposure: Array2<f64>,
}

/// `R(u,v)`: `v` first, then `n` distinct uniformly drawn other items.
pub fn sample_item_set<R: Rng + ?Sized>(
    v: usize,
    n: usize,
    n_items: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if n >= n_items {
        return Err(Error::Config(format!(
            "cannot sample {n} items besides the target from a catalogue of {n_items}"
        )));
    }
    let mut out = Vec::with_capacity(n + 1);
    out.push(v);
    out.extend(
        index::sample(rng, n_items - 1, n)
            .into_iter()
            .map(|k| if k >= v { k + 1 } else { k }),
    );
    Ok(out)
}

impl DccfModel {
    pub fn new(
        cfg: DccfConfig,
        features: &ItemFeatureTable,
        exposure: &ExposureModel,
        seed: u64,
    ) -> Result<Self> {
        Self::with_weights(cfg, features.values().clone(), exposure.weight_matrix(), seed)
    }

    /// Builds a model from an explicit `|U| x |V|` exposure weight table.
    pub fn with_weights(
        cfg: DccfConfig,
        features: Array2<f64>,
        exposure: Array2<f64>,
        seed: u64,
    ) -> Result<Self> {
        if exposure.ncols() != features.nrows() {
            return Err(Error::Config(format!(
                "exposure covers {} items, features cover {}",
                exposure.ncols(),
                features.nrows()
            )));
        }
        if cfg.n_feature_samples == 0 || cfg.dim == 0 {
            return Err(Error::Config("dim and n_feature_samples must be positive".into()));
        }
        if !(cfg.sigma_m >= 0.0) {
            return Err(Error::Config(format!("sigma_m must be non-negative, got {}", cfg.sigma_m)));
        }
        let mut rng = substream(seed, STREAM_INIT, 1);
        let (n_users, n_items) = exposure.dim();
        let user = EmbeddingTable::normal(n_users, cfg.dim, cfg.init_std, &mut rng);
        let item = EmbeddingTable::normal(n_items, cfg.dim, cfg.init_std, &mut rng);
        let mut sizes = vec![cfg.dim + features.ncols()];
        sizes.extend(&cfg.hidden);
        sizes.push(cfg.dim);
        let mlp = MlpParams::glorot(&sizes, cfg.bias, cfg.final_activation, &mut rng);
        Ok(DccfModel {
            cfg,
            user,
            item,
            mlp,
            features,
            exposure,
        })
    }

    pub fn n_users(&self) -> usize {
        self.user.rows()
    }

    pub fn n_items(&self) -> usize {
        self.item.rows()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn exposure(&self) -> &Array2<f64> {
        &self.exposure
    }

    fn check_user_item(&self, u: usize, v: usize) -> Result<()> {
        if u >= self.n_users() || v >= self.n_items() {
            return Err(Error::Config(format!(
                "pair ({u}, {v}) out of range for {} users x {} items",
                self.n_users(),
                self.n_items()
            )));
        }
        Ok(())
    }

    /// `u · MLP([v'; m])`.
    pub fn conditional_preference(&self, u: usize, item: usize, m: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_user_item(u, item)?;
        let mut input = self.item.row(item).to_vec();
        input.extend(m.iter());
        let (out, _) = self.mlp.forward(&input)?;
        Ok(self.user.row(u).iter().zip(&out).map(|(a, b)| a * b).sum())
    }

    /// `d` draws from normal(m_v, sigma_m), one per row.
    pub fn sample_features<R: Rng + ?Sized>(&self, v: usize, d: usize, rng: &mut R) -> Array2<f64> {
        let std = self.cfg.feature_std();
        let mean = self.features.row(v);
        let mut out = Array2::zeros((d, mean.len()));
        for mut row in out.rows_mut() {
            for (x, &mu) in row.iter_mut().zip(mean.iter()) {
                *x = if std == 0.0 {
                    mu
                } else {
                    mu + std * rng.sample::<f64, _>(StandardNormal)
                };
            }
        }
        out
    }

    /// Draws the estimate ingredients for `(u, v)` under the configured variant.
    pub fn draw_estimate<R: Rng + ?Sized>(&self, u: usize, v: usize, rng: &mut R) -> Result<Estimate> {
        self.check_user_item(u, v)?;
        Ok(match self.cfg.variant {
            Variant::Full => {
                let items = sample_item_set(v, self.cfg.n_sampled_items, self.n_items(), rng)?;
                let weights = items.iter().map(|&i| self.exposure[[u, i]]).collect();
                let features = self.sample_features(v, self.cfg.n_feature_samples, rng);
                Estimate {
                    items,
                    weights,
                    features,
                }
            }
            Variant::Ns | Variant::Nd => Estimate {
                items: vec![v],
                weights: vec![if self.cfg.variant == Variant::Ns {
                    self.exposure[[u, v]]
                } else {
                    1.0
                }],
                features: self.features.slice(s![v..v + 1, ..]).to_owned(),
            },
        })
    }

    /// Runs the MLP on every `[item embedding; feature draw]` row of `ests`,
    /// feature draw outermost within an estimate. The first layer is applied
    /// to items and feature draws separately and summed per row, since each
    /// item embedding is shared by all `d` draws and vice versa.
    fn forward_rows(&self, ests: &[&Estimate]) -> Result<SplitForward> {
        let dim = self.cfg.dim;
        let n_item_rows: usize = ests.iter().map(|e| e.items.len()).sum();
        let n_feat_rows: usize = ests.iter().map(|e| e.features.nrows()).sum();
        let rows: usize = ests.iter().map(|e| e.rows()).sum();
        let mut items = Array2::zeros((n_item_rows, dim));
        let mut feats = Array2::zeros((n_feat_rows, self.features.ncols()));
        let (mut ir, mut fr) = (0, 0);
        for e in ests {
            for &item in &e.items {
                items.row_mut(ir).assign(&self.item.row(item));
                ir += 1;
            }
            feats.slice_mut(s![fr..fr + e.features.nrows(), ..]).assign(&e.features);
            fr += e.features.nrows();
        }
        let first = &self.mlp.layers[0];
        let from_items = items.dot(&first.weight.slice(s![.., ..dim]).t());
        let from_feats = feats.dot(&first.weight.slice(s![.., dim..]).t());
        let mut pre0 = Array2::zeros((rows, first.fan_out()));
        let (mut r, mut ir, mut fr) = (0, 0, 0);
        for e in ests {
            for j in 0..e.features.nrows() {
                for i in 0..e.items.len() {
                    let mut row = pre0.row_mut(r);
                    row.assign(&from_items.row(ir + i));
                    row += &from_feats.row(fr + j);
                    if let Some(b) = &first.bias {
                        row += b;
                    }
                    r += 1;
                }
            }
            ir += e.items.len();
            fr += e.features.nrows();
        }
        let (out, cache) = self.mlp.forward_from_first_pre(pre0);
        Ok(SplitForward {
            items,
            feats,
            out,
            cache,
        })
    }

    /// Evaluates a batch of estimates for users `users[i]`.
    pub fn evaluate_estimates(&self, users: &[usize], ests: &[&Estimate]) -> Result<Vec<f64>> {
        let out = self.forward_rows(ests)?.out;
        let mut start = 0;
        let mut values = Vec::with_capacity(ests.len());
        for (&u, e) in users.iter().zip(ests) {
            let urow = self.user.row(u);
            let inv_d = 1.0 / e.features.nrows() as f64;
            let mut y = 0.0;
            for r in 0..e.rows() {
                let w = e.weights[r % e.items.len()];
                y += w * urow.dot(&out.row(start + r));
            }
            values.push(y * inv_d);
            start += e.rows();
        }
        Ok(values)
    }

    pub fn estimate(&self, u: usize, est: &Estimate) -> Result<f64> {
        Ok(self.evaluate_estimates(&[u], &[est])?[0])
    }

    /// One stochastic estimate of the preference of `u` for `v`.
    pub fn estimate_preference<R: Rng + ?Sized>(&self, u: usize, v: usize, rng: &mut R) -> Result<f64> {
        let est = self.draw_estimate(u, v, rng)?;
        self.estimate(u, &est)
    }

    /// Exact sum over the whole catalogue with noiseless features:
    /// `Σ_{v'} P(v'|u) f(u, v', m_v)`.
    pub fn oracle_estimate(&self, u: usize, v: usize) -> Result<f64> {
        self.check_user_item(u, v)?;
        let m = self.features.row(v);
        let mut total = 0.0;
        for item in 0..self.n_items() {
            total += self.exposure[[u, item]] * self.conditional_preference(u, item, m)?;
        }
        Ok(total)
    }

    /// Scores all `candidates` of one user. Every candidate shares the same
    /// pool of sampled items and the same feature noise, so differences
    /// between candidates are not swamped by sampling noise.
    pub fn score_candidates(&self, u: usize, candidates: &[usize], rng: &mut StreamRng) -> Result<Vec<f64>> {
        if self.cfg.variant != Variant::Full {
            let ests = candidates
                .iter()
                .map(|&v| self.draw_estimate(u, v, rng))
                .collect::<Result<Vec<_>>>()?;
            return self.evaluate_estimates(&vec![u; ests.len()], &ests.iter().collect::<Vec<_>>());
        }
        let n = self.cfg.n_sampled_items;
        let n_items = self.n_items();
        if n >= n_items {
            return Err(Error::Config(format!(
                "cannot sample {n} items besides the target from a catalogue of {n_items}"
            )));
        }
        let pool: Vec<usize> = index::sample(rng, n_items, (n + 1).min(n_items)).into_vec();
        let d = self.cfg.n_feature_samples;
        let std = self.cfg.feature_std();
        let dm = self.features.ncols();
        let noise = Array2::from_shape_fn((d, dm), |_| {
            if std == 0.0 {
                0.0
            } else {
                std * rng.sample::<f64, _>(StandardNormal)
            }
        });
        let ests: Vec<Estimate> = candidates
            .iter()
            .map(|&v| {
                self.check_user_item(u, v)?;
                let mut items = Vec::with_capacity(n + 1);
                items.push(v);
                items.extend(pool.iter().copied().filter(|&i| i != v).take(n));
                let weights = items.iter().map(|&i| self.exposure[[u, i]]).collect();
                let features = &noise + &self.features.row(v);
                Ok(Estimate {
                    items,
                    weights,
                    features,
                })
            })
            .collect::<Result<_>>()?;
        self.evaluate_estimates(&vec![u; ests.len()], &ests.iter().collect::<Vec<_>>())
    }

    /// Summed BPR loss of `samples` (no regulariser) and its gradient.
    pub fn loss_and_grads(&self, samples: &[PairSample]) -> Result<(f64, DccfGrads)> {
        let ests: Vec<&Estimate> = samples.iter().flat_map(|s| [&s.pos, &s.neg]).collect();
        let fwd = self.forward_rows(&ests)?;
        let out = &fwd.out;
        let dim = self.cfg.dim;
        let mut out_grad = Array2::zeros(out.raw_dim());
        let mut grads = DccfGrads::zeros(self);
        let mut loss = 0.0;
        let mut start = 0;
        for s in samples {
            let urow = self.user.row(s.user);
            let mut values = [0.0; 2];
            let mut spans = [(0, 0); 2];
            for (k, e) in [&s.pos, &s.neg].into_iter().enumerate() {
                let inv_d = 1.0 / e.features.nrows() as f64;
                let mut y = 0.0;
                for r in 0..e.rows() {
                    y += e.weights[r % e.items.len()] * urow.dot(&out.row(start + r));
                }
                values[k] = y * inv_d;
                spans[k] = (start, e.rows());
                start += e.rows();
            }
            let diff = values[0] - values[1];
            loss -= log_sigmoid(diff);
            let g = -sigmoid(-diff);
            let mut gu = Array1::<f64>::zeros(dim);
            for (k, e) in [&s.pos, &s.neg].into_iter().enumerate() {
                let coef = if k == 0 { g } else { -g } / e.features.nrows() as f64;
                let (first, n) = spans[k];
                for r in 0..n {
                    let c = coef * e.weights[r % e.items.len()];
                    gu.scaled_add(c, &out.row(first + r));
                    out_grad.row_mut(first + r).scaled_add(c, &urow);
                }
            }
            grads.user.add(s.user, gu.as_slice().expect("contiguous"), 1.0);
        }
        let (tail, g0) = self.mlp.backward_to_first_pre(&fwd.cache, out_grad.view())?;
        // Fold row gradients back onto the shared item and feature rows.
        let mut g_items = Array2::<f64>::zeros((fwd.items.nrows(), g0.ncols()));
        let mut g_feats = Array2::<f64>::zeros((fwd.feats.nrows(), g0.ncols()));
        let (mut r, mut ir, mut fr) = (0, 0, 0);
        for e in &ests {
            for j in 0..e.features.nrows() {
                for i in 0..e.items.len() {
                    let g = g0.row(r);
                    g_items.row_mut(ir + i).scaled_add(1.0, &g);
                    g_feats.row_mut(fr + j).scaled_add(1.0, &g);
                    r += 1;
                }
            }
            ir += e.items.len();
            fr += e.features.nrows();
        }
        let first = &self.mlp.layers[0];
        let mut weight = Array2::zeros(first.weight.raw_dim());
        weight.slice_mut(s![.., ..dim]).assign(&g_items.t().dot(&fwd.items));
        weight.slice_mut(s![.., dim..]).assign(&g_feats.t().dot(&fwd.feats));
        let bias = first.bias.as_ref().map(|_| g_items.sum_axis(Axis(0)));
        let mut layers = vec![DenseGrad { weight, bias }];
        layers.extend(tail);
        grads.mlp = MlpGrads { layers };
        let input_grad = g_items.dot(&first.weight.slice(s![.., ..dim]));
        let mut ir = 0;
        for e in &ests {
            for &item in &e.items {
                let g = input_grad.row(ir);
                grads.item.add(item, g.as_slice().expect("contiguous"), 1.0);
                ir += 1;
            }
        }
        Ok((loss, grads))
    }

    /// Adds `2 λ θ` for the MLP and every touched embedding row and returns
    /// the penalty value.
    pub fn add_l2(&self, grads: &mut DccfGrads, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        let mut penalty = add_row_l2(&mut grads.user, &self.user, lambda);
        penalty += add_row_l2(&mut grads.item, &self.item, lambda);
        grads.mlp.add_l2(&self.mlp, lambda);
        penalty + lambda * self.mlp.sum_squares()
    }

    /// Draws the negative and both estimates of one training pair.
    pub fn draw_pair<R: Rng + ?Sized>(
        &self,
        u: usize,
        pos: usize,
        positives: &[usize],
        rng: &mut R,
    ) -> Result<Option<PairSample>> {
        let Some(neg) = sample_negative(rng, positives, self.n_items()) else {
            return Ok(None);
        };
        Ok(Some(PairSample {
            user: u,
            pos: self.draw_estimate(u, pos, rng)?,
            neg: self.draw_estimate(u, neg, rng)?,
        }))
    }

    /// Mini-batch BPR training; `positives[u]` (sorted) are the items never
    /// drawn as negatives for `u`.
    pub fn train(
        &mut self,
        pairs: &[Pair],
        positives: &[Vec<usize>],
        tcfg: &TrainConfig,
        exec: Execution,
    ) -> Result<Vec<EpochRecord>> {
        let mut adam = Adam::new(tcfg.lr);
        let mut order = pairs.to_vec();
        let mut trace = Vec::with_capacity(tcfg.epochs);
        let bs = tcfg.batch_size.max(1);
        for epoch in 0..tcfg.epochs {
            let start = Instant::now();
            order.copy_from_slice(pairs);
            order.shuffle(&mut substream(tcfg.seed, STREAM_SHUFFLE, 1 + epoch as u64));
            let mut total = 0.0;
            let mut counted = 0;
            for (b, batch) in order.chunks(bs).enumerate() {
                let model = &*self;
                let drawn = exec.map_range(batch.len(), |k| {
                    let (u, v) = batch[k];
                    let idx = ((epoch as u64) << 32) | (b * bs + k) as u64;
                    let mut rng = substream(tcfg.seed, STREAM_SAMPLE, idx);
                    model.draw_pair(u, v, &positives[u], &mut rng)
                });
                let samples: Vec<PairSample> = drawn
                    .into_iter()
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .flatten()
                    .collect();
                if samples.is_empty() {
                    continue;
                }
                counted += samples.len();
                let chunks: Vec<&[PairSample]> = samples.chunks(CHUNK).collect();
                let parts = exec.map_slice(&chunks, |c| model.loss_and_grads(c));
                let mut grads = DccfGrads::zeros(model);
                let mut loss = 0.0;
                for part in parts {
                    let (l, g) = part?;
                    loss += l;
                    grads.merge(&g);
                }
                loss += model.add_l2(&mut grads, tcfg.l2);
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "loss is {loss} at epoch {epoch}, batch {b}"
                    )));
                }
                total += loss;
                adam.tick();
                self.apply(&adam, &grads)
                    .map_err(|e| Error::Divergence(format!("epoch {epoch}, batch {b}: {e}")))?;
            }
            trace.push(EpochRecord {
                epoch,
                mean_loss: total / counted.max(1) as f64,
                wall_time: start.elapsed().as_secs_f64(),
            });
        }
        Ok(trace)
    }

    fn apply(&mut self, adam: &Adam, grads: &DccfGrads) -> Result<()> {
        adam.update_rows("user embeddings", &mut self.user, &grads.user)?;
        adam.update_rows("item embeddings", &mut self.item, &grads.item)?;
        for (i, (layer, g)) in self.mlp.layers.iter_mut().zip(&grads.mlp.layers).enumerate() {
            let Dense {
                weight,
                bias,
                weight_moments,
                bias_moments,
            } = layer;
            adam.update(
                &format!("mlp layer {i} weight"),
                weight.as_slice_mut().expect("standard layout"),
                g.weight.as_slice().expect("standard layout"),
                weight_moments,
            )?;
            if let (Some(b), Some(gb)) = (bias.as_mut(), g.bias.as_ref()) {
                adam.update(
                    &format!("mlp layer {i} bias"),
                    b.as_slice_mut().expect("standard layout"),
                    gb.as_slice().expect("standard layout"),
                    bias_moments,
                )?;
            }
        }
        Ok(())
    }

    /// User embeddings, item embeddings, then MLP parameters.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.user.values.iter().copied().collect();
        out.extend(self.item.values.iter());
        out.extend(self.mlp.flatten());
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        let nu = self.user.values.len();
        let ni = self.item.values.len();
        for (x, &y) in self.user.values.iter_mut().zip(&flat[..nu]) {
            *x = y;
        }
        for (x, &y) in self.item.values.iter_mut().zip(&flat[nu..nu + ni]) {
            *x = y;
        }
        self.mlp.assign_flat(&flat[nu + ni..]);
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        let put = |ckpt: &mut Checkpoint, name: String, a: &Array2<f64>| {
            ckpt.push(name, vec![a.nrows(), a.ncols()], a.iter().copied().collect())
        };
        put(ckpt, "dccf.user".into(), &self.user.values);
        put(ckpt, "dccf.item".into(), &self.item.values);
        for (i, l) in self.mlp.layers.iter().enumerate() {
            put(ckpt, format!("dccf.mlp.{i}.weight"), &l.weight);
            if let Some(b) = &l.bias {
                ckpt.push(format!("dccf.mlp.{i}.bias"), vec![b.len()], b.to_vec());
            }
        }
        put(ckpt, "dccf.features".into(), &self.features);
        put(ckpt, "dccf.exposure".into(), &self.exposure);
    }

    pub fn from_checkpoint(cfg: DccfConfig, ckpt: &Checkpoint) -> Result<Self> {
        let matrix = |name: &str| -> Result<Array2<f64>> {
            let t = ckpt.get(name)?;
            tensor_matrix(&t.shape, &t.data, name)
        };
        let mut layers = Vec::new();
        for i in 0..=cfg.hidden.len() {
            let weight = matrix(&format!("dccf.mlp.{i}.weight"))?;
            let bias = if cfg.bias {
                Some(Array1::from(ckpt.get(&format!("dccf.mlp.{i}.bias"))?.data.clone()))
            } else {
                None
            };
            layers.push(Dense::new(weight, bias));
        }
        Ok(DccfModel {
            mlp: MlpParams {
                layers,
                final_activation: cfg.final_activation,
            },
            cfg,
            user: EmbeddingTable::from_values(matrix("dccf.user")?),
            item: EmbeddingTable::from_values(matrix("dccf.item")?),
            features: matrix("dccf.features")?,
            exposure: matrix("dccf.exposure")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use ndarray::array;

    fn small_model(variant: Variant, n_users: usize, n_items: usize, seed: u64) -> DccfModel {
        let mut rng = substream(seed, "fixture", 0);
        let features = Array2::from_shape_fn((n_items, 3), |_| rng.random_range(-1.0..1.0));
        let exposure = Array2::from_shape_fn((n_users, n_items), |_| rng.random_range(0.05..1.0));
        let cfg = DccfConfig {
            variant,
            dim: 4,
            hidden: vec![5],
            n_sampled_items: 2,
            init_std: 0.5,
            ..DccfConfig::default()
        };
        DccfModel::with_weights(cfg, features, exposure, seed).unwrap()
    }

    #[test]
    fn item_set_edges() {
        let mut rng = substream(0, "r", 0);
        assert_eq!(sample_item_set(3, 0, 10, &mut rng).unwrap(), vec![3]);
        let mut all = sample_item_set(3, 9, 10, &mut rng).unwrap();
        assert_eq!(all[0], 3);
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(sample_item_set(3, 10, 10, &mut rng).is_err());
        for _ in 0..100 {
            let r = sample_item_set(5, 4, 8, &mut rng).unwrap();
            assert_eq!(r.iter().filter(|&&i| i == 5).count(), 1);
            let mut d = r.clone();
            d.sort_unstable();
            d.dedup();
            assert_eq!(d.len(), 5);
        }
    }

    #[test]
    fn zero_user_or_zero_mlp_gives_zero() {
        let mut m = small_model(Variant::Full, 2, 5, 1);
        m.user.row_mut(0).fill(0.0);
        let f = m.features.row(2).to_owned();
        assert_eq!(m.conditional_preference(0, 2, f.view()).unwrap(), 0.0);
        m.mlp.zero();
        assert_eq!(m.conditional_preference(1, 3, f.view()).unwrap(), 0.0);
        let mut nd = small_model(Variant::Nd, 2, 5, 1);
        nd.mlp.zero();
        let mut rng = substream(0, "x", 0);
        assert_eq!(nd.estimate_preference(1, 1, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_conditional_preference() {
        // dim 2, one feature, single hidden layer of width 2, no bias.
        let features = array![[0.5], [-1.0]];
        let exposure = array![[1.0, 1.0]];
        let cfg = DccfConfig {
            dim: 2,
            hidden: vec![2],
            bias: false,
            ..DccfConfig::default()
        };
        let mut m = DccfModel::with_weights(cfg, features, exposure, 0).unwrap();
        m.user.values = array![[1.0, -2.0]];
        m.item.values = array![[0.3, -0.7], [1.0, 2.0]];
        m.mlp.layers[0].weight = array![[1.0, 0.5, -1.0], [-0.5, 1.0, 2.0]];
        m.mlp.layers[1].weight = array![[2.0, 0.0], [1.0, -1.0]];
        // input [0.3, -0.7, 0.5]
        let h1 = [
            (0.3f64 + 0.5 * -0.7 - 0.5).max(0.0),
            (-0.15f64 - 0.7 + 1.0).max(0.0),
        ];
        let out = [(2.0 * h1[0]).max(0.0), (h1[0] - h1[1]).max(0.0)];
        let expected = out[0] - 2.0 * out[1];
        let got = m.conditional_preference(0, 0, m.features.row(0)).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_features_are_exact() {
        let m = DccfModel {
            cfg: DccfConfig {
                sigma_m: 0.0,
                ..small_model(Variant::Full, 1, 3, 0).cfg
            },
            ..small_model(Variant::Full, 1, 3, 0)
        };
        let draws = m.sample_features(1, 4, &mut substream(0, "f", 0));
        for row in draws.rows() {
            assert_eq!(row, m.features.row(1));
        }
    }

    #[test]
    fn feature_draws_have_the_configured_mean() {
        let m = small_model(Variant::Full, 1, 3, 0);
        let n = 100_000;
        let draws = m.sample_features(2, n, &mut substream(0, "f", 1));
        let mean = draws.column(0).sum() / n as f64;
        let bound = 4.0 * m.cfg.feature_std() / (n as f64).sqrt();
        assert!((mean - m.features[[2, 0]]).abs() < bound);
    }

    #[test]
    fn full_collapses_to_ns_without_sampling() {
        let mut full = small_model(Variant::Full, 3, 6, 2);
        full.cfg.n_sampled_items = 0;
        full.cfg.n_feature_samples = 1;
        full.cfg.sigma_m = 0.0;
        let mut ns = full.clone();
        ns.cfg.variant = Variant::Ns;
        let mut rng = substream(1, "c", 0);
        for u in 0..3 {
            for v in 0..6 {
                let a = full.estimate_preference(u, v, &mut rng).unwrap();
                let b = ns.estimate_preference(u, v, &mut rng).unwrap();
                let direct = full.exposure[[u, v]]
                    * full.conditional_preference(u, v, full.features.row(v)).unwrap();
                assert!((a - b).abs() < 1e-12 && (a - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exhaustive_sampling_matches_oracle() {
        let mut m = small_model(Variant::Full, 4, 7, 3);
        m.cfg.n_sampled_items = 6;
        m.cfg.n_feature_samples = 1;
        m.cfg.sigma_m = 0.0;
        let mut rng = substream(2, "o", 0);
        for u in 0..4 {
            for v in 0..7 {
                let est = m.estimate_preference(u, v, &mut rng).unwrap();
                assert!((est - m.oracle_estimate(u, v).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_item_oracle_and_uniform_hand_sum() {
        let single = small_model(Variant::Full, 1, 1, 0);
        let direct = single.exposure[[0, 0]]
            * single.conditional_preference(0, 0, single.features.row(0)).unwrap();
        assert!((single.oracle_estimate(0, 0).unwrap() - direct).abs() < 1e-15);

        let mut m = small_model(Variant::Full, 1, 4, 5);
        m.exposure.fill(0.25);
        let m1 = m.features.row(1).to_owned();
        let fs: Vec<f64> = (0..4)
            .map(|i| m.conditional_preference(0, i, m1.view()).unwrap())
            .collect();
        let mean = fs.iter().sum::<f64>() / 4.0;
        assert!((m.oracle_estimate(0, 1).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn scaling_exposure_scales_estimates() {
        let m = small_model(Variant::Full, 2, 6, 4);
        let mut scaled = m.clone();
        scaled.exposure *= 3.0;
        for u in 0..2 {
            let a = m.score_candidates(u, &[0, 1, 2, 3, 4, 5], &mut substream(4, "s", u as u64)).unwrap();
            let b = scaled
                .score_candidates(u, &[0, 1, 2, 3, 4, 5], &mut substream(4, "s", u as u64))
                .unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((3.0 * x - y).abs() < 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn candidate_scoring_matches_single_estimates_for_ablations() {
        let m = small_model(Variant::Nd, 2, 5, 6);
        let scores = m.score_candidates(1, &[4, 0, 2], &mut substream(0, "s", 0)).unwrap();
        for (k, v) in [4, 0, 2].into_iter().enumerate() {
            let direct = m.conditional_preference(1, v, m.features.row(v)).unwrap();
            assert!((scores[k] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_variance_shrinks_with_draw_count() {
        let mut m = small_model(Variant::Full, 1, 5, 8);
        m.cfg.n_sampled_items = 4;
        m.cfg.sigma_m = 0.5;
        let reps = 4000;
        let mut vars = Vec::new();
        for d in [1usize, 4, 16, 64] {
            m.cfg.n_feature_samples = d;
            let mut rng = substream(d as u64, "mc", 0);
            let ys: Vec<f64> = (0..reps)
                .map(|_| m.estimate_preference(0, 2, &mut rng).unwrap())
                .collect();
            let mean = ys.iter().sum::<f64>() / reps as f64;
            vars.push(ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (reps - 1) as f64);
        }
        for (k, d) in [4.0, 16.0, 64.0].into_iter().enumerate() {
            let ratio = vars[0] / vars[k + 1] / d;
            assert!((0.5..2.0).contains(&ratio), "d={d}: ratio {ratio}");
        }
    }

    fn check_gradients(variant: Variant, l2: f64) {
        let m = small_model(variant, 3, 4, 11);
        let mut rng = substream(11, "g", 0);
        let samples: Vec<PairSample> = [(0, 1), (1, 3), (2, 0), (0, 2)]
            .into_iter()
            .filter_map(|(u, v)| m.draw_pair(u, v, &[v], &mut rng).unwrap())
            .collect();
        let (_, mut grads) = m.loss_and_grads(&samples).unwrap();
        m.add_l2(&mut grads, l2);
        let analytic = grads.flatten(3, 4);
        let touched_users: Vec<usize> = grads.user.touched().to_vec();
        let touched_items: Vec<usize> = grads.item.touched().to_vec();
        let loss = |flat: &[f64]| {
            let mut probe = m.clone();
            probe.assign_flat(flat);
            let (l, _) = probe.loss_and_grads(&samples).unwrap();
            let rows = |t: &EmbeddingTable, rows: &[usize]| -> f64 {
                rows.iter().map(|&r| t.row(r).dot(&t.row(r))).sum()
            };
            l + l2
                * (rows(&probe.user, &touched_users)
                    + rows(&probe.item, &touched_items)
                    + probe.mlp.sum_squares())
        };
        let report = grad_check(loss, &m.flat_params(), &analytic, 1e-5, 1e-4);
        assert!(
            report.passed,
            "{variant:?}: max rel err {} at {}",
            report.max_relative_error, report.worst_index
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(Variant::Full, 0.0);
        check_gradients(Variant::Full, 1e-2);
        check_gradients(Variant::Ns, 1e-3);
        check_gradients(Variant::Nd, 0.0);
    }

    #[test]
    fn bpr_user_gradient_matches_closed_form() {
        // d loss / d u = -σ(-(y+ - y-)) · (d y+/du - d y-/du)
        let m = small_model(Variant::Nd, 1, 3, 12);
        let mut rng = substream(0, "b", 0);
        let s = m.draw_pair(0, 1, &[1], &mut rng).unwrap().unwrap();
        let (_, grads) = m.loss_and_grads(std::slice::from_ref(&s)).unwrap();
        let mlp_out = |v: usize| {
            let mut x = m.item.row(v).to_vec();
            x.extend(m.features.row(v));
            m.mlp.forward(&x).unwrap().0
        };
        let (op, on) = (mlp_out(s.pos.items[0]), mlp_out(s.neg.items[0]));
        let diff = m.estimate(0, &s.pos).unwrap() - m.estimate(0, &s.neg).unwrap();
        let coef = -sigmoid(-diff);
        let g = grads.user.get(0).unwrap();
        for k in 0..4 {
            assert!((g[k] - coef * (op[k] - on[k])).abs() < 1e-12);
        }
    }

    fn toy_training(epochs: usize) -> (DccfModel, Vec<EpochRecord>, DccfModel) {
        let mut m = small_model(Variant::Full, 3, 4, 13);
        let init = m.clone();
        let pairs = vec![(0, 0), (0, 1), (1, 1), (1, 2), (2, 3), (2, 0)];
        let positives = crate::data::SplitResult::by_user(&pairs, 3);
        let tcfg = TrainConfig {
            lr: 0.01,
            l2: 0.0,
            batch_size: 2,
            epochs,
            seed: 5,
        };
        let trace = m.train(&pairs, &positives, &tcfg, Execution::Sequential).unwrap();
        (m, trace, init)
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (m, trace, init) = toy_training(0);
        assert!(trace.is_empty());
        assert_eq!(m, init);
    }

    #[test]
    fn training_is_reproducible_and_freezes_inputs() {
        let (a, ta, init) = toy_training(5);
        let (b, tb, _) = toy_training(5);
        assert_eq!(a, b);
        let la: Vec<f64> = ta.iter().map(|r| r.mean_loss).collect();
        let lb: Vec<f64> = tb.iter().map(|r| r.mean_loss).collect();
        assert_eq!(la, lb);
        assert_eq!(a.features, init.features);
        assert_eq!(a.exposure, init.exposure);
        assert_ne!(a.user, init.user);
    }

    #[test]
    fn sequential_and_parallel_training_agree() {
        let mut a = small_model(Variant::Full, 3, 6, 14);
        let mut b = a.clone();
        let pairs: Vec<Pair> = (0..3).flat_map(|u| [(u, u), (u, u + 3)]).collect();
        let positives = crate::data::SplitResult::by_user(&pairs, 3);
        let tcfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        a.train(&pairs, &positives, &tcfg, Execution::Sequential).unwrap();
        b.train(&pairs, &positives, &tcfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small_model(Variant::Full, 2, 3, 15);
        let mut ckpt = Checkpoint::default();
        m.to_checkpoint(&mut ckpt);
        let back = DccfModel::from_checkpoint(m.cfg.clone(), &Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap())
            .unwrap();
        assert_eq!(back.flat_params(), m.flat_params());
        assert_eq!(back.exposure, m.exposure);
    }
}
