// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod depthcam;
pub mod error;
pub mod evalharness;
pub mod geometry;
pub mod graspselect;
pub mod graspsim;
pub mod neural;
pub mod pipeline;
pub mod procgen;
pub mod rng;
pub mod selfsup;
pub mod tasksim;
pub mod trainer;

pub use error::{Error, Result};
