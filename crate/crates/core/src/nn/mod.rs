//! Dense tensors, a reverse-mode graph over the layer ops the emotion model
//! needs, losses, Adam, and finite-difference gradient checking.

mod adam;
mod gradcheck;
mod graph;
mod kernels;
mod layers;
pub mod ops;
mod params;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{
    grad_check, grad_check_params, grad_check_with, relative_error, ParamCheck, FD_STEP, REL_FLOOR,
};
pub use graph::{Gradients, Graph, Mode, Var};
pub use layers::{
    multi_head_attention, scaled_dot_attention, sinusoidal_positions, AttentionParams,
    EncoderLayerParams, Linear,
};
pub(crate) use params::{kaiming_bound, uniform};
pub use params::{Param, ParamId, ParamStore};
pub use rng::DropoutKey;
pub use tensor::Tensor;
