//! Tensor engine with reverse-mode automatic differentiation, generic over
//! `f32` and `f64`.

mod adam;
pub mod layers;
pub mod ops;
mod params;
mod real;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use ops::conv::{conv2d, conv_transpose2d, ConvGeometry};
pub use ops::loss::{cross_entropy, l1, mse};
pub use ops::norm::{batch_norm, BatchStats};
pub use ops::shape::{concat, stack};
pub use params::{Binding, ParamId, ParamStore};
pub use real::{gemm, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
