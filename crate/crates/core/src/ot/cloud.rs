use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Uniformly weighted empirical distribution: one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    samples: Array2<f64>,
}

impl PointCloud {
    pub fn new(samples: Array2<f64>) -> Result<Self> {
        let (n, d) = samples.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "point cloud must have at least one point and one dimension, got {n}x{d}"
            )));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("point cloud entry {bad}")));
        }
        Ok(Self { samples })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("rows of a point cloud must have equal length"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let samples = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::shape(e.to_string()))?;
        Self::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    /// Same cloud shifted by `offset` (one entry per dimension).
    pub fn translated(&self, offset: &[f64]) -> Result<Self> {
        if offset.len() != self.dim() {
            return Err(Error::shape(format!(
                "offset has {} entries, cloud has dimension {}",
                offset.len(),
                self.dim()
            )));
        }
        let shift = ArrayView1::from(offset);
        Self::new(&self.samples + &shift)
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.samples.dim() != other.samples.dim() {
            return Err(Error::shape(format!(
                "clouds must have equal shape, got {:?} and {:?}",
                self.samples.dim(),
                other.samples.dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::shape(format!(
                "clouds must share a dimension, got {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// A point on the unit sphere `S^{d-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(Array1<f64>);

impl Direction {
    /// Normalizes `v`; fails on a zero or non-finite vector.
    pub fn normalized(v: Vec<f64>) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::invalid(format!(
                "cannot normalize a direction with norm {norm}"
            )));
        }
        Ok(Self(v.into_iter().map(|x| x / norm).collect()))
    }

    /// Standard basis vector `e_axis` in `dim` dimensions.
    pub fn axis(dim: usize, axis: usize) -> Result<Self> {
        if axis >= dim {
            return Err(Error::invalid(format!(
                "axis {axis} out of range for dimension {dim}"
            )));
        }
        let mut v = Array1::zeros(dim);
        v[axis] = 1.0;
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_array(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("direction is contiguous")
    }

    pub fn norm(&self) -> f64 {
        self.0.dot(&self.0).sqrt()
    }

    pub fn negated(&self) -> Self {
        Self(-&self.0)
    }
}

/// Draws `n` directions uniformly on `S^{d-1}` by normalizing standard
/// Gaussian vectors.
pub fn sample_unit_directions<R: Rng + ?Sized>(
    d: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Direction>> {
    if d == 0 || n == 0 {
        return Err(Error::invalid(format!(
            "need d >= 1 and n >= 1 to sample directions, got d={d}, n={n}"
        )));
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        // A zero draw has probability zero; redraw if it happens anyway.
        if let Ok(dir) = Direction::normalized(v) {
            out.push(dir);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_dimensional_directions_are_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dir in sample_unit_directions(1, 3, &mut rng).unwrap() {
            assert!(dir.as_slice() == [1.0] || dir.as_slice() == [-1.0]);
        }
    }

    #[test]
    fn sampled_directions_are_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dirs = sample_unit_directions(5, 1, &mut rng).unwrap();
        assert_eq!(dirs.len(), 1);
        assert!((dirs[0].norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn planar_directions_have_small_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dirs = sample_unit_directions(2, 10_000, &mut rng).unwrap();
        let mut mean = [0.0; 2];
        for d in &dirs {
            mean[0] += d.as_slice()[0] / 10_000.0;
            mean[1] += d.as_slice()[1] / 10_000.0;
        }
        assert!((mean[0].powi(2) + mean[1].powi(2)).sqrt() < 0.05);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(PointCloud::new(Array2::zeros((0, 2))).is_err());
        assert!(PointCloud::new(Array2::zeros((2, 0))).is_err());
        assert!(PointCloud::from_rows(&[vec![f64::NAN]]).is_err());
        assert!(PointCloud::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(Direction::normalized(vec![0.0, 0.0]).is_err());
    }
}
