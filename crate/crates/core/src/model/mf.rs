//! BPR-trained matrix factorisation: `p_u · q_v + b_u + b_v + b_g`.
//!
//! Used both as the MF baseline and as the backbone of the learned exposure
//! models. Under the pairwise objective `b_u` and `b_g` cancel out of every
//! score difference, so they keep their initial value of zero; they are
//! kept as parameters so checkpoints carry the full scoring form.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{bpr_pair_loss, sample_negative, EpochRecord};
use crate::data::Pair;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Adam, Checkpoint, EmbeddingTable, RowGrads};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfConfig {
    pub dim: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub init_std: f64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            dim: 32,
            lr: 0.005,
            l2: 1e-4,
            batch_size: 128,
            epochs: 30,
            init_std: 0.1,
        }
    }
}

/// Sparse gradients of [`MatrixFactorization::loss_and_grads`].
#[derive(Debug, Clone)]
pub struct MfGrads {
    pub user: RowGrads,
    pub item: RowGrads,
    pub item_bias: RowGrads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFactorization {
    pub user: EmbeddingTable,
    pub item: EmbeddingTable,
    pub user_bias: Vec<f64>,
    pub item_bias: EmbeddingTable,
    pub global_bias: f64,
}

impl MatrixFactorization {
    pub fn init(n_users: usize, n_items: usize, cfg: &MfConfig, seed: u64) -> Self {
        let mut rng = substream(seed, crate::rng::STREAM_INIT, 0);
        MatrixFactorization {
            user: EmbeddingTable::normal(n_users, cfg.dim, cfg.init_std, &mut rng),
            item: EmbeddingTable::normal(n_items, cfg.dim, cfg.init_std, &mut rng),
            user_bias: vec![0.0; n_users],
            item_bias: EmbeddingTable::zeros(n_items, 1),
            global_bias: 0.0,
        }
    }

    pub fn n_users(&self) -> usize {
        self.user.rows()
    }

    pub fn n_items(&self) -> usize {
        self.item.rows()
    }

    pub fn score(&self, u: usize, v: usize) -> f64 {
        self.user.row(u).dot(&self.item.row(v))
            + self.user_bias[u]
            + self.item_bias.values[[v, 0]]
            + self.global_bias
    }

    /// Scores of every item for user `u`.
    pub fn user_scores(&self, u: usize) -> Vec<f64> {
        let base = self.user_bias[u] + self.global_bias;
        self.item
            .values
            .dot(&self.user.row(u))
            .iter()
            .zip(self.item_bias.values.column(0))
            .map(|(s, b)| s + b + base)
            .collect()
    }

    /// Mini-batch BPR with one uniformly drawn negative per positive per
    /// epoch. `positives[u]` (sorted) lists the items never used as negatives
    /// for `u`.
    pub fn train(
        &mut self,
        pairs: &[Pair],
        positives: &[Vec<usize>],
        cfg: &MfConfig,
        seed: u64,
    ) -> Result<Vec<EpochRecord>> {
        let n_items = self.n_items();
        let mut adam = Adam::new(cfg.lr);
        let mut order: Vec<Pair> = pairs.to_vec();
        let mut trace = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let start = Instant::now();
            order.copy_from_slice(pairs);
            order.shuffle(&mut substream(seed, crate::rng::STREAM_SHUFFLE, epoch as u64));
            let mut neg_rng = substream(seed, crate::rng::STREAM_NEGATIVES, epoch as u64);
            let mut total = 0.0;
            let mut counted = 0usize;
            for (b, batch) in order.chunks(cfg.batch_size.max(1)).enumerate() {
                let triples: Vec<(usize, usize, usize)> = batch
                    .iter()
                    .filter_map(|&(u, pos)| {
                        sample_negative(&mut neg_rng, &positives[u], n_items).map(|neg| (u, pos, neg))
                    })
                    .collect();
                counted += triples.len();
                let (batch_loss, grads) = self.loss_and_grads(&triples, cfg.l2);
                if !batch_loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "matrix factorisation loss is {batch_loss} at epoch {epoch}, batch {b}"
                    )));
                }
                total += batch_loss;
                adam.tick();
                adam.update_rows("mf user embeddings", &mut self.user, &grads.user)?;
                adam.update_rows("mf item embeddings", &mut self.item, &grads.item)?;
                adam.update_rows("mf item biases", &mut self.item_bias, &grads.item_bias)?;
            }
            trace.push(EpochRecord {
                epoch,
                mean_loss: total / counted.max(1) as f64,
                wall_time: start.elapsed().as_secs_f64(),
            });
        }
        Ok(trace)
    }

    /// Summed BPR loss over `(user, positive, negative)` triples plus the L2
    /// penalty on the rows they touch, with its gradient.
    pub fn loss_and_grads(&self, triples: &[(usize, usize, usize)], l2: f64) -> (f64, MfGrads) {
        let dim = self.user.dim();
        let mut grads = MfGrads {
            user: RowGrads::new(dim),
            item: RowGrads::new(dim),
            item_bias: RowGrads::new(1),
        };
        let mut loss = 0.0;
        for &(u, pos, neg) in triples {
            let diff = self.score(u, pos) - self.score(u, neg);
            loss += bpr_pair_loss(diff, 0.0);
            // d loss / d diff
            let g = -sigmoid(-diff);
            let pu = self.user.row(u).to_owned();
            let delta = &self.item.row(pos) - &self.item.row(neg);
            grads.user.add(u, delta.as_slice().expect("contiguous"), g);
            grads.item.add(pos, pu.as_slice().expect("contiguous"), g);
            grads.item.add(neg, pu.as_slice().expect("contiguous"), -g);
            grads.item_bias.add(pos, &[1.0], g);
            grads.item_bias.add(neg, &[1.0], -g);
        }
        if l2 > 0.0 {
            loss += add_row_l2(&mut grads.user, &self.user, l2);
            loss += add_row_l2(&mut grads.item, &self.item, l2);
            loss += add_row_l2(&mut grads.item_bias, &self.item_bias, l2);
        }
        (loss, grads)
    }

    pub fn to_checkpoint(&self, prefix: &str, ckpt: &mut Checkpoint) {
        let put = |ckpt: &mut Checkpoint, name: &str, a: &Array2<f64>| {
            ckpt.push(
                format!("{prefix}.{name}"),
                vec![a.nrows(), a.ncols()],
                a.iter().copied().collect(),
            )
        };
        put(ckpt, "user", &self.user.values);
        put(ckpt, "item", &self.item.values);
        put(ckpt, "item_bias", &self.item_bias.values);
        ckpt.push(
            format!("{prefix}.user_bias"),
            vec![self.user_bias.len()],
            self.user_bias.clone(),
        );
        ckpt.push(format!("{prefix}.global_bias"), vec![1], vec![self.global_bias]);
    }

    pub fn from_checkpoint(prefix: &str, ckpt: &Checkpoint) -> Result<Self> {
        let matrix = |name: &str| -> Result<Array2<f64>> {
            let t = ckpt.get(&format!("{prefix}.{name}"))?;
            tensor_matrix(&t.shape, &t.data, name)
        };
        Ok(MatrixFactorization {
            user: EmbeddingTable::from_values(matrix("user")?),
            item: EmbeddingTable::from_values(matrix("item")?),
            item_bias: EmbeddingTable::from_values(matrix("item_bias")?),
            user_bias: ckpt.get(&format!("{prefix}.user_bias"))?.data.clone(),
            global_bias: ckpt.get(&format!("{prefix}.global_bias"))?.data[0],
        })
    }
}

pub(crate) fn tensor_matrix(shape: &[usize], data: &[f64], name: &str) -> Result<Array2<f64>> {
    if shape.len() != 2 {
        return Err(Error::Config(format!("tensor {name} should be 2-d, has shape {shape:?}")));
    }
    Array2::from_shape_vec((shape[0], shape[1]), data.to_vec())
        .map_err(|e| Error::Config(format!("tensor {name}: {e}")))
}

/// Adds `2 λ θ` for every touched row and returns `λ Σ ‖θ_row‖²`.
pub(crate) fn add_row_l2(grads: &mut RowGrads, table: &EmbeddingTable, lambda: f64) -> f64 {
    let rows: Vec<usize> = grads.touched().to_vec();
    let mut penalty = 0.0;
    for r in rows {
        let row = table.row(r);
        penalty += row.dot(&row);
        let g = grads.row_mut(r);
        for (gk, &x) in g.iter_mut().zip(row.iter()) {
            *gk += 2.0 * lambda * x;
        }
    }
    lambda * penalty
}
