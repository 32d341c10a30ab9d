use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockState {
    Active,
    Identity,
    AdapterOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

/// `y = x W + b` with `W` stored as `in × out` and `b` as a `1 × out` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl Affine {
    /// Uniform fan-in initialization in `±1/√in`.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Array2::from_shape_fn((in_dim, out_dim), |_| rng.random_range(-bound..bound));
        let bias = Array2::from_shape_fn((1, out_dim), |_| rng.random_range(-bound..bound));
        Self { weight, bias }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((in_dim, out_dim)),
            bias: Array2::zeros((1, out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn macs(&self) -> u64 {
        (self.in_dim() * self.out_dim()) as u64
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::shape(format!(
                "affine layer expects width {}, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight) + &self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub state: BlockState,
    pub first: Affine,
    pub second: Affine,
    pub adapter: Option<Affine>,
}

impl BlockSpec {
    pub fn new(first: Affine, second: Affine, activation: Activation) -> Result<Self> {
        if first.out_dim() != second.in_dim() {
            return Err(Error::shape(format!(
                "block layers do not chain: {} -> {} then {} -> {}",
                first.in_dim(),
                first.out_dim(),
                second.in_dim(),
                second.out_dim()
            )));
        }
        Ok(Self {
            in_dim: first.in_dim(),
            hidden_dim: first.out_dim(),
            out_dim: second.out_dim(),
            activation,
            state: BlockState::Active,
            first,
            second,
            adapter: None,
        })
    }

    /// Equal input and output width: the block has a skip path and may be
    /// scored and replaced by the identity.
    pub fn is_residual(&self) -> bool {
        self.in_dim == self.out_dim
    }

    pub fn is_active(&self) -> bool {
        self.state == BlockState::Active
    }

    /// The transform `f` without the skip path.
    pub fn branch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let h = self.first.apply(x)?;
        let h = match self.activation {
            Activation::Relu => h.mapv(|v| if v > 0.0 { v } else { 0.0 }),
            Activation::Linear => h,
        };
        self.second.apply(&h)
    }

    /// Output of the block under its current state.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim {
            return Err(Error::shape(format!(
                "block expects width {}, got {}",
                self.in_dim,
                x.ncols()
            )));
        }
        match self.state {
            BlockState::Identity => Ok(x.clone()),
            BlockState::AdapterOnly => self
                .adapter
                .as_ref()
                .ok_or_else(|| Error::invalid("adapter-only block without adapter"))?
                .apply(x),
            BlockState::Active => {
                let fx = self.branch(x)?;
                if self.is_residual() {
                    Ok(x + &fx)
                } else {
                    Ok(fx)
                }
            }
        }
    }

    /// Tape version of the original (pre-adapter) path `f` or `x + f(x)`.
    pub(crate) fn record_active(&self, tape: &mut Tape, x: Var, params: &[Var]) -> Result<Var> {
        let h = autodiff::affine(tape, x, params[0], params[1])?;
        let h = match self.activation {
            Activation::Relu => autodiff::relu(tape, h),
            Activation::Linear => h,
        };
        let fx = autodiff::affine(tape, h, params[2], params[3])?;
        if self.is_residual() {
            autodiff::residual_add(tape, x, fx)
        } else {
            Ok(fx)
        }
    }

    pub fn macs(&self) -> u64 {
        match self.state {
            BlockState::Identity => 0,
            BlockState::AdapterOnly => self.adapter.as_ref().map_or(0, Affine::macs),
            BlockState::Active => self.first.macs() + self.second.macs(),
        }
    }

    /// Sequential parametric layers on the inference path.
    pub fn depth(&self) -> usize {
        match self.state {
            BlockState::Identity => 0,
            BlockState::AdapterOnly => 1,
            BlockState::Active => 2,
        }
    }

    pub fn parameter_count(&self) -> usize {
        let count = |a: &Affine| a.weight.len() + a.bias.len();
        match self.state {
            BlockState::Identity => 0,
            BlockState::AdapterOnly => self.adapter.as_ref().map_or(0, count),
            BlockState::Active => count(&self.first) + count(&self.second),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_branch_is_identity() {
        let b = BlockSpec::new(Affine::zeros(2, 2), Affine::zeros(2, 2), Activation::Relu).unwrap();
        let x = array![[1.0, -2.0], [0.5, 3.0]];
        assert_eq!(b.apply(&x).unwrap(), x);
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        assert!(
            BlockSpec::new(Affine::zeros(2, 3), Affine::zeros(4, 2), Activation::Relu).is_err()
        );
    }

    #[test]
    fn single_affine_macs() {
        assert_eq!(Affine::zeros(16, 10).macs(), 160);
    }
}
