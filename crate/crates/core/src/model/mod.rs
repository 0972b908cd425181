//! Multi-scale segmentation network with mask-enhanced decoder modules.

mod config;
pub mod data;
pub mod infer;
pub mod loss;
mod net;
pub mod train;

pub use config::ModelConfig;
pub use data::{normalize_intensity, Sample};
pub use infer::{predict_volume, PredictOptions, Prediction, WindowWeighting};
pub use loss::{deep_supervision_loss, scale_weights, LossBreakdown, SupervisedLoss};
pub use net::{mem_forward, MemOutputs, MemVars, Model, MultiScaleOutputs, ParamStore};
pub use train::{train, Control, EpochRecord, LrSchedule, TrainConfig, TrainReport};
