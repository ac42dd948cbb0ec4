//! From-scratch engine for the fixed temporal CNN regressor.
//!
//! The network is bias-free: conv layers, ReLU, max pooling, two dense
//! layers with dropout in between. With no biases and `ReLU(0) = 0`, the
//! zero signal is always scored exactly 0, which the integrated-gradients
//! baseline relies on. All arithmetic is `f64`.

mod adam;
mod arch;
pub mod layers;
mod model;
mod network;

pub use adam::{Adam, AdamState};
pub use arch::{ArchDescriptor, StageShape};
pub use layers::{FeatureMap, Tensor};
pub use model::{
    glorot_fans, init_params, load_checkpoint, save_checkpoint, ModelParams, Provenance, CHECKPOINT_FORMAT_VERSION,
    CHECKPOINT_KIND,
};
pub use network::{
    backward, backward_to_input, forward, l2_input_gradient, loss_l1, loss_l2, predict, score_gradient, ForwardTrace,
    Gradients, Mode,
};
