//! Motion in CNN feature tensors.
//!
//! Input-space motion carries over into the channels of intermediate feature
//! tensors, shrunk by the cumulative stride of the layers in between. This
//! crate provides the pieces to measure that: a small deterministic CNN
//! engine, affine warps with their ground-truth motion fields, exhaustive
//! block matching, feature-space motion compensation, masked NRMSE, and
//! finite-difference checks of the flow equation through each operation.

pub mod block_match;
pub mod error;
pub mod experiment;
pub mod flow_verify;
pub mod image_io;
pub mod latent_mc;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod texture;

pub use error::{Error, Result};
pub use tensor::{Grid, Mask, MotionField, MotionVector, Tensor};
