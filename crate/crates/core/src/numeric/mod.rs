//! Dense tensors, reverse-mode differentiation, layers and the optimizer.

pub mod adam;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use layers::{linear_forward, LinearLayer, Mlp};
pub use params::{ParamId, ParamStore, Parameter, ParamsRecord};
pub use tape::{GradTargets, Grads, Tape, Var};
pub use tensor::{masked_max, relu, sigmoid, Tensor};
