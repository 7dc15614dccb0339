//! End-to-end runs: exposure model, recommender, evaluation.

use serde::{Deserialize, Serialize};

use crate::data::{InteractionTable, ItemFeatureTable, SplitResult};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalProtocol, MetricsReport};
use crate::exec::Execution;
use crate::exposure::{ExposureConfig, ExposureModel};
use crate::model::{DccfConfig, DccfModel, EpochRecord, MatrixFactorization, MfConfig, ModelKind, TrainConfig};
use crate::numerics::Checkpoint;

/// Everything that determines a single training + evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub exposure: ExposureConfig,
    pub dccf: DccfConfig,
    pub train: TrainConfig,
    /// Baseline factorisation settings; `epochs`, `lr`, `l2` and
    /// `batch_size` come from `train` when the model is `Mf`.
    pub mf: MfConfig,
    pub eval: EvalProtocol,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Dccf,
            exposure: ExposureConfig::default(),
            dccf: DccfConfig::default(),
            train: TrainConfig::default(),
            mf: MfConfig::default(),
            eval: EvalProtocol::default(),
        }
    }
}

impl RunConfig {
    /// Defaults for `model`. The baseline factorisation starts from the
    /// learning rate and L2 of [`MfConfig::default`].
    pub fn for_model(model: ModelKind) -> Self {
        let mut cfg = RunConfig {
            model,
            ..RunConfig::default()
        };
        match model.variant() {
            Some(v) => cfg.dccf.variant = v,
            None => {
                cfg.train.lr = cfg.mf.lr;
                cfg.train.l2 = cfg.mf.l2;
            }
        }
        cfg
    }

    /// The factorisation settings actually used by the MF baseline.
    pub fn baseline_mf(&self) -> MfConfig {
        MfConfig {
            lr: self.train.lr,
            l2: self.train.l2,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            ..self.mf.clone()
        }
    }
}

/// A trained recommender of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Trained {
    Dccf(Box<DccfModel>),
    Mf(MatrixFactorization),
}

impl Trained {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        match self {
            Trained::Dccf(m) => m.to_checkpoint(&mut ckpt),
            Trained::Mf(m) => m.to_checkpoint("mf", &mut ckpt),
        }
        ckpt
    }

    pub fn from_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Self> {
        Ok(match cfg.model {
            ModelKind::Mf => Trained::Mf(MatrixFactorization::from_checkpoint("mf", ckpt)?),
            kind => {
                let mut dccf = cfg.dccf.clone();
                dccf.variant = kind.variant().expect("estimator kinds have a variant");
                Trained::Dccf(Box::new(DccfModel::from_checkpoint(dccf, ckpt)?))
            }
        })
    }

    pub fn evaluate(
        &self,
        table: &InteractionTable,
        test: &[crate::data::Pair],
        protocol: &EvalProtocol,
        exec: Execution,
    ) -> Result<MetricsReport> {
        match self {
            Trained::Dccf(m) => evaluate(m.as_ref(), table, test, protocol, exec),
            Trained::Mf(m) => evaluate(m, table, test, protocol, exec),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Trained,
    pub exposure: Option<ExposureModel>,
    pub exposure_trace: Vec<EpochRecord>,
    pub trace: Vec<EpochRecord>,
}

/// Trains the exposure model (when the recommender needs one) and then the
/// recommender on `split.train`.
pub fn train_model(
    table: &InteractionTable,
    features: Option<&ItemFeatureTable>,
    split: &SplitResult,
    cfg: &RunConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    train_model_with(table, features, split, cfg, None, exec)
}

/// [`train_model`] with an optional exposure model that is used as-is
/// instead of being fitted.
pub fn train_model_with(
    table: &InteractionTable,
    features: Option<&ItemFeatureTable>,
    split: &SplitResult,
    cfg: &RunConfig,
    frozen_exposure: Option<ExposureModel>,
    exec: Execution,
) -> Result<TrainOutcome> {
    let positives = SplitResult::by_user(&split.train, table.n_users());
    if cfg.model == ModelKind::Mf {
        let mf_cfg = cfg.baseline_mf();
        let mut mf = MatrixFactorization::init(table.n_users(), table.n_items(), &mf_cfg, cfg.train.seed);
        let trace = mf.train(&split.train, &positives, &mf_cfg, cfg.train.seed)?;
        return Ok(TrainOutcome {
            model: Trained::Mf(mf),
            exposure: None,
            exposure_trace: Vec::new(),
            trace,
        });
    }
    let features = features.ok_or_else(|| Error::Config(format!("{} needs item features", cfg.model.name())))?;
    if features.n_items() != table.n_items() {
        return Err(Error::Config(format!(
            "features cover {} items, interactions {}",
            features.n_items(),
            table.n_items()
        )));
    }
    let (exposure, exposure_trace) = match frozen_exposure {
        Some(e) => {
            if e.n_users() != table.n_users() || e.n_items() != table.n_items() {
                return Err(Error::Config(format!(
                    "exposure model is {}x{}, interactions {}x{}",
                    e.n_users(),
                    e.n_items(),
                    table.n_users(),
                    table.n_items()
                )));
            }
            (e, Vec::new())
        }
        None => ExposureModel::fit(table, &split.train, &cfg.exposure, cfg.train.seed)?,
    };
    let mut dccf = cfg.dccf.clone();
    dccf.variant = cfg.model.variant().expect("estimator kinds have a variant");
    let mut model = DccfModel::new(dccf, features, &exposure, cfg.train.seed)?;
    let trace = model.train(&split.train, &positives, &cfg.train, exec)?;
    Ok(TrainOutcome {
        model: Trained::Dccf(Box::new(model)),
        exposure: Some(exposure),
        exposure_trace,
        trace,
    })
}

/// [`train_model`] followed by evaluation on `split.test`.
pub fn run(
    table: &InteractionTable,
    features: Option<&ItemFeatureTable>,
    split: &SplitResult,
    cfg: &RunConfig,
    exec: Execution,
) -> Result<(TrainOutcome, MetricsReport)> {
    let outcome = train_model(table, features, split, cfg, exec)?;
    let report = outcome.model.evaluate(table, &split.test, &cfg.eval, exec)?;
    Ok((outcome, report))
}
