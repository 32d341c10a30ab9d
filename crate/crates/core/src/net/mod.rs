//! Residual MLP with removable blocks.
//!
//! A block with equal input and output width computes `x + f(x)` and may be
//! scored and replaced by the identity. A width-changing block computes
//! `f(x)` alone; it can only be swapped for a single affine adapter.

mod block;
mod checkpoint;
mod metrics;
mod model;

pub use block::{Activation, Affine, BlockSpec, BlockState};
pub use checkpoint::{
    decode, encode, load_checkpoint, manifest_path, save_checkpoint, CHECKPOINT_VERSION,
};
pub use metrics::{lipschitz_estimate_block, lipschitz_report, LipschitzReport};
pub use model::{
    ActivationPair, BoundParams, Collected, ParamGroup, Recorded, ResidualNet, TapePair,
};
