//! Dual-attention multimodal fusion: per-modality residual attention
//! branches, a shared cross-modal attention stage, multitask heads, Monte
//! Carlo dropout uncertainty and a synthetic data generator.

pub mod data;
pub mod error;
pub mod layers;
pub mod mfa;
pub mod metrics;
pub mod mifa;
pub mod net;
pub mod training;
pub mod uncertainty;

pub use error::{CoreError, Result};
pub use mfa::{Mfa, MfaOmegaSwitches, MfaOutput, MfaSwitches};
pub use mifa::{MifaOmegaSwitches, MifaOutput, MifaParams, MifaSwitches};
pub use net::{
    argmax_rows, mtl_loss, saliency, AblationFlags, DrifaNet, DrifaNetConfig, MultimodalBatch, NetOutput,
    OmegaFlags, Stochastic,
};
pub use data::{generate, split, Dataset, DatasetSplit, Sample, SyntheticSpec};
pub use metrics::{classification_metrics, ClassificationMetrics};
pub use uncertainty::{mc_predict, uncertainty_report, EnsembleConfig, PredictiveDistribution, UncertaintyReport};
pub use training::{evaluate, train, TrainConfig, TrainOutcome};
