//! Dense 5-D tensors and the reverse-mode operations the segmentation network needs.

mod array;
pub mod checkpoint;
pub mod conv;
mod direct;
pub mod gradcheck;
mod graph;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod resample;
mod scalar;

pub use array::{Shape, Tensor};
pub use conv::{conv3d, conv_transpose3d, ConvGeom, ConvParams};
pub use graph::{Grads, Graph, Var};
pub use loss::{ce_loss, dice_loss, one_hot};
pub use ops::{instance_norm, leaky_relu, softmax_channels};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use resample::{downsample, upsample, DownMode, UpMode};
pub use scalar::Scalar;
