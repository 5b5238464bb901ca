//! Bayesian fitting of non-stationary GEV models to cycle block extremes.

mod diagnostics;
mod fit;
mod model;
mod posterior;
mod sampler;

pub use diagnostics::{
    dic, dic_from_deviances, gelman_rubin, posterior_mean, psrf, quantile_sorted,
    sample_variance, stable_mean, DicResult, ParamSummary,
};
pub use fit::{
    fit_all, fit_model, select_model, write_trace_csv, FitReport, FitSettings, ModelReport,
    Posterior, MIN_ACCEPTANCE, RHAT_LIMIT,
};
pub use model::{ModelName, ModelSpec, ParamLayout, Prior, PriorSpec};
pub use posterior::GevPosterior;
pub use sampler::{run_sampler, Chain, FnTarget, SamplerSettings, Target};

use thiserror::Error;

use crate::blocks::BlocksError;
use crate::gev::LinkError;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("invalid sampler settings: {0}")]
    Settings(String),
    #[error("initialization failed: {0}")]
    Init(String),
    #[error("not enough blocks to fit {0}")]
    NoBlocks(String),
    #[error("block from site {0:?} is not part of the model")]
    UnknownSite(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("{0}")]
    Diagnostics(String),
    #[error("model {0} has no fitted parameters")]
    Unfitted(String),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Blocks(#[from] BlocksError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
