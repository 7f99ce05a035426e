//! The segmentation model: tensors, layers and the dual-stream network.

mod layers;
mod net;
mod tensor;

pub use layers::{upsample_bilinear, upsample_bilinear_backward, BatchNorm2d, Conv2d};
pub use net::{DualStreamModel, ForwardCache, ModelConfig, ParamVisitor, TrainForward};
pub use tensor::Tensor4;
