use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_unit_directions, Direction};
use crate::{Error, Result};

/// How the maximizing direction of the max-sliced distance is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxMode {
    /// Best of `n_proj` random directions.
    RandomSearch,
    /// Start from the best random direction, then projected gradient ascent on the sphere.
    ProjectedAscent,
}

/// Where projection directions come from.
///
/// `Seeded(s)` re-seeds a private generator with `s` on every evaluation, so
/// every call sees the same direction set. `Unseeded` draws fresh directions
/// from the caller's stream on every call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    Seeded(u64),
    Unseeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceConfig {
    pub p: f64,
    pub n_proj: usize,
    pub max_mode: MaxMode,
    pub seed_mode: SeedMode,
    pub ascent_iterations: usize,
    pub ascent_step: f64,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            p: 2.0,
            n_proj: 40,
            max_mode: MaxMode::RandomSearch,
            seed_mode: SeedMode::Unseeded,
            ascent_iterations: 50,
            ascent_step: 0.1,
        }
    }
}

impl DistanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::invalid(format!(
                "order p must be positive, got {}",
                self.p
            )));
        }
        if self.n_proj == 0 {
            return Err(Error::invalid("n_proj must be at least 1"));
        }
        if !(self.ascent_step > 0.0 && self.ascent_step.is_finite()) {
            return Err(Error::invalid("ascent_step must be positive"));
        }
        Ok(())
    }

    /// The `n_proj` directions used for one evaluation in dimension `d`.
    pub fn directions<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<Vec<Direction>> {
        self.validate()?;
        match self.seed_mode {
            SeedMode::Seeded(seed) => {
                let mut own = ChaCha8Rng::seed_from_u64(seed);
                sample_unit_directions(d, self.n_proj, &mut own)
            }
            SeedMode::Unseeded => sample_unit_directions(d, self.n_proj, rng),
        }
    }
}
