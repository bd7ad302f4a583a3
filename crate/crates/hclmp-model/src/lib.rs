//! Models for composition-to-spectrum prediction: the hierarchical
//! correlation-learning network with optional generative transfer input, the
//! conditional WGAN that provides that input, and the reference baselines.

pub mod baselines;
pub mod error;
pub mod gan;
pub mod hclmp;
pub mod nn;

pub use baselines::{
    import_external_predictions, lininterp_fit, train_mlp_baseline, LinInterpModel, LinInterpPrediction,
    MlpBaselineConfig, TrainedMlpBaseline,
};
pub use error::ModelError;
pub use gan::{
    evaluate_generator, train_cwgan, untrained_generator, CwganConfig, CwganModel, GanEpochLog, TransferGenerator,
};
pub use hclmp::{
    argmin_first, kl_alignment, scheduled_lr, train_hclmp, DecoderKind, EmbedSampling, EpochLog, FixedTransfer,
    HclmpConfig, HclmpModel, KlDirection, LatentGaussian, TrainCorpus, TrainedHclmp, TransferRep,
};
