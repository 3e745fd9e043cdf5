//! Tensor and layer engine: forward passes, exact backward passes, and a
//! finite-difference gradient verifier.

pub mod activation;
pub mod conv;
pub mod deconv;
mod gemm;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod pool;
pub mod resize;
pub mod tensor;

pub use activation::{relu, relu_backward};
pub use conv::{conv2d_backward, conv2d_forward};
pub use deconv::{deconv2d_backward, deconv2d_forward};
pub use gradcheck::{grad_check, grad_check_suite, GradCheckReport};
pub use layer::{Layer, LayerCache, LayerGrad, LayerKind, LayerSpec};
pub use loss::{softmax, softmax_cross_entropy, SoftmaxCrossEntropy};
pub use pool::{maxpool_backward, maxpool_forward, ArgmaxMap};
pub use resize::bilinear_resize;
pub use tensor::{Scalar, Tensor};
