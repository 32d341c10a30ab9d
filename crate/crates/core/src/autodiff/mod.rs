//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation as it is evaluated; nodes are stored
//! in creation order, which is already a topological order, so the backward
//! pass walks the node list once from the end. One tape serves one training
//! step and is then dropped.
//!
//! Sorting is differentiated by freezing the permutation found in the
//! forward pass and scattering upstream gradients back through it. Where the
//! order is locally constant this is the exact derivative; at ties the
//! stable index order picks the subgradient.

mod gradcheck;
mod losses;
mod tape;

pub use gradcheck::{finite_diff_check, GradCheck, Probe};
pub use losses::{
    affine, kl_diag_gaussian_loss, mean_lp_loss, mmd_rbf_loss, msw_loss, relu, residual_add,
    sliced_loss, softmax_cross_entropy, sort_1d, MswEval,
};
pub use tape::{Gradients, SortRecord, Tape, Var};
