pub mod external;
pub mod lininterp;
pub mod mlp;

pub use external::import_external_predictions;
pub use lininterp::{lininterp_fit, LinInterpModel, LinInterpPrediction};
pub use mlp::{train_mlp_baseline, MlpBaselineConfig, TrainedMlpBaseline};
