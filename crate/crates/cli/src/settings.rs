//! Hyperparameter flags and the optional TOML config file they override.
//!
//! Config keys use the flag names, e.g. `n-samples = 20` or `lr = 0.001`.

use std::path::Path;

use clap::Args;
use dccf::experiment::RunConfig;
use dccf::exposure::{ExposureVariant, ScoreMapping};
use dccf::model::ModelKind;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ModelOpts {
    /// dccf, dccf_ns, dccf_nd or mf.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// random, uniform, bias or unbias.
    #[arg(long)]
    pub exposure: Option<ExposureVariant>,
    /// Items sampled besides the target.
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Feature draws per estimate.
    #[arg(long)]
    pub d: Option<usize>,
    /// Feature noise variance.
    #[arg(long)]
    pub sigma_m: Option<f64>,
    /// Embedding size.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 coefficient.
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Propensity exponent of the unbiased exposure.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub weight_cap: Option<f64>,
    /// sigmoid or raw.
    #[arg(long)]
    pub score_mapping: Option<ScoreMapping>,
    #[arg(long)]
    pub exposure_epochs: Option<usize>,
    #[arg(long)]
    pub exposure_lr: Option<f64>,
    #[arg(long)]
    pub exposure_l2: Option<f64>,
    #[arg(long)]
    pub exposure_dim: Option<usize>,
}

macro_rules! overlay {
    ($flags:expr, $file:expr; $($field:ident),*) => {
        ModelOpts { $($field: $flags.$field.or($file.$field)),* }
    };
}

impl ModelOpts {
    /// Flags win over config-file values.
    pub fn over(self, file: ModelOpts) -> ModelOpts {
        overlay!(self, file; model, exposure, n_samples, d, sigma_m, dim, hidden, epochs, lr, l2,
            batch_size, eta, weight_cap, score_mapping, exposure_epochs, exposure_lr, exposure_l2,
            exposure_dim)
    }

    /// Applies the set options on top of the model's defaults.
    pub fn to_run_config(&self, seed: u64) -> RunConfig {
        let mut cfg = RunConfig::for_model(self.model.unwrap_or(ModelKind::Dccf));
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        if let Some(e) = self.exposure {
            cfg.exposure.variant = e;
        }
        if let Some(n) = self.n_samples {
            cfg.dccf.n_sampled_items = n;
        }
        if let Some(d) = self.d {
            cfg.dccf.n_feature_samples = d;
        }
        set(&mut cfg.dccf.sigma_m, self.sigma_m);
        if let Some(dim) = self.dim {
            cfg.dccf.dim = dim;
            cfg.mf.dim = dim;
        }
        if let Some(h) = &self.hidden {
            cfg.dccf.hidden = h.clone();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        set(&mut cfg.train.lr, self.lr);
        set(&mut cfg.train.l2, self.l2);
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        set(&mut cfg.exposure.eta, self.eta);
        set(&mut cfg.exposure.weight_cap, self.weight_cap);
        if let Some(m) = self.score_mapping {
            cfg.exposure.mapping = m;
        }
        if let Some(e) = self.exposure_epochs {
            cfg.exposure.mf.epochs = e;
        }
        set(&mut cfg.exposure.mf.lr, self.exposure_lr);
        set(&mut cfg.exposure.mf.l2, self.exposure_l2);
        if let Some(d) = self.exposure_dim {
            cfg.exposure.mf.dim = d;
        }
        cfg.train.seed = seed;
        cfg.eval.seed = seed;
        cfg
    }
}

/// Reads model options from a TOML file.
pub fn load_config(path: &Path) -> CliResult<ModelOpts> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}
