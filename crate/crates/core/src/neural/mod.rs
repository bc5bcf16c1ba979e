//! Tensor kernels, tape autodiff, and the grasp / task / action network.

pub mod io;
pub mod loss;
pub mod net;
pub mod policy;
pub mod tape;
pub mod tensor;

pub use io::{load_params, load_params_for, save_params};
pub use loss::{backward, joint_loss, Gradients, Labels, LossConfig, LossValue, PolicyMask};
pub use net::{forward, forward_tape, ArchConfig, Forward, Heads, Mode, NetInput, NetOutput, Theta, TogNetParams, TrunkPath};
pub use policy::{log_density, sample_action, PolicyConfig, SampledAction};
