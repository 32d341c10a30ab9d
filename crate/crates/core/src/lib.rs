//! Depth compression for residual MLPs.
//!
//! Networks are trained with a penalty on how far each residual block moves
//! its input distribution (measured with the max-sliced Wasserstein distance),
//! after which blocks whose measured change is smallest are replaced by the
//! identity until a validation-accuracy budget is exhausted.
//!
//! Layout:
//! - [`ot`]: discrete optimal-transport distances and alternative metrics.
//! - [`autodiff`]: a small reverse-mode tape over dense matrices, including a
//!   differentiable sort with frozen permutation.
//! - [`net`]: the residual MLP, block removal, adapters and architecture counters.
//! - [`compression`]: the regularized objective, training, the greedy removal
//!   loop and its diagnostics.
//! - [`harness`]: datasets, experiment configs, sweeps and report files.

pub mod autodiff;
pub mod compression;
mod error;
pub mod harness;
pub mod net;
pub mod ot;

pub use error::{Error, Result};
