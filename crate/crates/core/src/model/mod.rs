//! Recommenders: the front-door estimator with its ablations, and the
//! matrix-factorisation baseline.

pub mod dccf;
pub mod mf;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dccf::{DccfConfig, DccfModel, Estimate, TrainConfig, Variant};
pub use mf::{MatrixFactorization, MfConfig, MfGrads};

use crate::error::Error;
use crate::numerics::log_sigmoid;

/// One line of a training loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_time: f64,
}

/// Recommender selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dccf,
    DccfNs,
    DccfNd,
    Mf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Dccf, ModelKind::DccfNs, ModelKind::DccfNd, ModelKind::Mf];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dccf => "dccf",
            ModelKind::DccfNs => "dccf_ns",
            ModelKind::DccfNd => "dccf_nd",
            ModelKind::Mf => "mf",
        }
    }

    /// Estimator variant, or `None` for matrix factorisation.
    pub fn variant(self) -> Option<Variant> {
        match self {
            ModelKind::Dccf => Some(Variant::Full),
            ModelKind::DccfNs => Some(Variant::Ns),
            ModelKind::DccfNd => Some(Variant::Nd),
            ModelKind::Mf => None,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

/// `-ln σ(pos - neg)`.
pub fn bpr_pair_loss(pos: f64, neg: f64) -> f64 {
    -log_sigmoid(pos - neg)
}

/// Uniform draw from the items not in `positives` (sorted). `None` when the
/// user has interacted with every item.
pub fn sample_negative<R: Rng + ?Sized>(
    rng: &mut R,
    positives: &[usize],
    n_items: usize,
) -> Option<usize> {
    if positives.len() >= n_items {
        return None;
    }
    // Rejection is cheap while positives are a small share of the catalogue.
    if positives.len() * 2 <= n_items {
        loop {
            let v = rng.random_range(0..n_items);
            if positives.binary_search(&v).is_err() {
                return Some(v);
            }
        }
    }
    let mut k = rng.random_range(0..n_items - positives.len());
    for (v, _) in (0..n_items).enumerate() {
        if positives.binary_search(&v).is_err() {
            if k == 0 {
                return Some(v);
            }
            k -= 1;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn bpr_loss_values() {
        assert!((bpr_pair_loss(1.3, 1.3) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bpr_pair_loss(1e6, 0.0) < 1e-300);
        assert!((bpr_pair_loss(2.0, 0.0) - 0.126_928_011_042_972_6).abs() < 1e-12);
    }

    #[test]
    fn negatives_avoid_positives() {
        let mut rng = substream(1, "neg", 0);
        for pos in [vec![0, 2, 4], vec![0, 1, 2, 3, 5], vec![]] {
            for _ in 0..200 {
                let v = sample_negative(&mut rng, &pos, 6).unwrap();
                assert!(!pos.contains(&v) && v < 6);
            }
        }
        assert_eq!(sample_negative(&mut rng, &[0, 1], 2), None);
    }

    #[test]
    fn model_names_round_trip() {
        for m in ModelKind::ALL {
            assert_eq!(m.name().parse::<ModelKind>().unwrap(), m);
        }
        assert!("dmf".parse::<ModelKind>().is_err());
    }
}
