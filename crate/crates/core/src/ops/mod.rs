//! Deterministic numeric primitives.

mod activation;
mod conv;
mod dense;
pub(crate) mod gemm;
mod pool;
mod sgd;

pub use activation::{relu, relu_backward, softmax, softmax_xent};
pub use conv::{conv2d, conv2d_backward, conv_out_dim, ConvGrads, ConvKernels};
pub(crate) use conv::{conv_block, conv_block_cols, im2col, Window};
pub use dense::{dense, dense_backward, DenseGrads};
pub use pool::{maxpool2d, maxpool2d_backward, maxpool2d_with_argmax};
pub use sgd::sgd_update;
