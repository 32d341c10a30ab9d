use ndarray::{Array2, Axis};

use crate::{Error, Result};

/// Feature rows with one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Samples {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l >= num_classes) {
            Some(l) => Err(Error::invalid(format!(
                "label {l} out of range for {num_classes} classes"
            ))),
            None => Ok(()),
        }
    }
}
