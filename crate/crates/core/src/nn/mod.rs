//! Small differentiable network engine: dense/conv layers, ReLU, pooling,
//! inverted dropout, Gaussian weight noise and softmax cross-entropy.

mod layer;
mod linalg;
mod loss;
mod model;
mod optim;
mod params;
pub mod zoo;

pub use layer::{LayerSpec, NoiseScale};
pub use loss::{loss_and_backward, softmax, softmax_xent};
pub use model::{Cache, Mode, Model, Realization};
pub use optim::OptState;
pub use params::{bias_name, weight_name, Params};
