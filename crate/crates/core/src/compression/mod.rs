//! Distribution-preserving training and greedy block removal.
//!
//! Training minimizes `J = L + λ·R`, where `L` is the classification loss
//! and `R` averages, over residual blocks still in use, a distance between
//! the minibatch rows entering and leaving each block. After training,
//! [`compress`] repeatedly replaces the block with the smallest measured
//! distance by the identity while validation accuracy stays within budget.

mod adapter;
mod algorithm;
mod config;
mod diagnostics;
mod objective;
mod samples;
mod train;

pub use adapter::{fit_adapter, AdapterFit, AdapterFitConfig};
pub use algorithm::{
    compress, compress_epsilon, compress_trained, epsilon_select, remove_lowest, score_blocks,
    CompressionReport, ScoreMethod, ScoredBlock, REPORT_FORMAT_VERSION,
};
pub use config::{DirectionRefresh, DistanceKind, LrSchedule, TrainConfig};
pub use diagnostics::{
    cosine, gradient_alignment, triangle_bound_check, GroupAlignment, LabelEmbedding, TriangleCheck,
};
pub use objective::{
    block_distances, block_distances_with, objective, objective_with, regularizer,
    regularizer_with, term_gradients_with, BlockDistance, BlockDistanceVector, DirectionBank,
    ObjectiveEval, TermGradients,
};
pub use samples::Samples;
pub use train::{accuracy, heal, train, EpochRecord, TrainLog};
