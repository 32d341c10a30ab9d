//! Discrete optimal-transport distances between equally-sized, uniformly
//! weighted point clouds.
//!
//! The 1-D closed form ([`wasserstein_1d`]) drives both the sliced and the
//! max-sliced estimators. [`exact_wasserstein_small`] enumerates every
//! bijection and is only meant as a ground-truth oracle for tiny clouds.

mod cloud;
mod config;
mod exact;
mod metrics;
mod sliced;

pub use cloud::{sample_unit_directions, Direction, PointCloud};
pub use config::{DistanceConfig, MaxMode, SeedMode};
pub use exact::{exact_wasserstein_small, MAX_EXACT_POINTS};
pub use metrics::{
    kl_diag_gaussian, mean_lp, median_pairwise_distance, mmd_rbf, Bandwidth, Norm, VARIANCE_FLOOR,
};
pub use sliced::{
    max_sliced_projected_ascent, max_sliced_wasserstein, max_sliced_with_directions, project,
    projected_distance, sliced_wasserstein, sliced_with_directions, wasserstein_1d, MaxSliced,
    Projection,
};
