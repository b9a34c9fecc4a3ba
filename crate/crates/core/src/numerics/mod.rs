//! Dense numeric kernel: matrices, convolution, a gradient tape and the
//! finite-difference oracle used to verify it.

pub mod conv;
pub mod fd;
pub mod matrix;
pub mod params;
pub mod tape;

pub use conv::{strided_conv2d, ConvGeometry, ConvKernel, FeatureMap};
pub use fd::{finite_diff_gradients, max_relative_error, DEFAULT_STEP};
pub use matrix::{gelu, layer_norm, matmul, softmax_rows, DenseMatrix};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
