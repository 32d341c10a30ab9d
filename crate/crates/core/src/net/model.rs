use std::ops::Range;

use ndarray::Array2;
use rand::Rng;

use super::block::{Activation, Affine, BlockSpec, BlockState};
use crate::autodiff::{self, Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNet {
    pub input_dim: usize,
    pub num_classes: usize,
    /// Input lift to the first block width; absent when `input_dim` already matches.
    pub stem: Option<Affine>,
    pub blocks: Vec<BlockSpec>,
    pub head: Affine,
}

/// Rows entering and leaving one block, aligned by sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPair {
    pub block: usize,
    pub input: Array2<f64>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collected {
    pub logits: Array2<f64>,
    /// One pair per eligible Active block, in block order.
    pub pairs: Vec<ActivationPair>,
}

/// Tape handles for every parameter array, in [`ResidualNet::parameters`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct TapePair {
    pub block: usize,
    pub input: Var,
    pub output: Var,
}

#[derive(Debug, Clone)]
pub struct Recorded {
    pub logits: Var,
    pub pairs: Vec<TapePair>,
}

/// Contiguous range of parameter arrays belonging to one layer group.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub block: Option<usize>,
    pub arrays: Range<usize>,
}

fn check_dim(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::invalid(format!("{name} must be positive")));
    }
    Ok(())
}

impl ResidualNet {
    /// Block `k` maps `widths[k]` to `widths[k + 1]` (the last block keeps its
    /// width). Equal-width blocks are residual; the rest are plain `f(x)`.
    pub fn build<R: Rng + ?Sized>(
        input_dim: usize,
        widths: &[usize],
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_dim("input_dim", input_dim)?;
        check_dim("num_classes", num_classes)?;
        if widths.is_empty() {
            return Err(Error::invalid("need at least one block width"));
        }
        for &w in widths {
            check_dim("block width", w)?;
        }
        let stem = (input_dim != widths[0]).then(|| Affine::init(input_dim, widths[0], rng));
        let mut blocks = Vec::with_capacity(widths.len());
        for (k, &in_dim) in widths.iter().enumerate() {
            let out_dim = widths.get(k + 1).copied().unwrap_or(in_dim);
            let hidden = out_dim;
            let first = Affine::init(in_dim, hidden, rng);
            let second = Affine::init(hidden, out_dim, rng);
            blocks.push(BlockSpec::new(first, second, Activation::Relu)?);
        }
        let head = Affine::init(*widths.last().expect("nonempty"), num_classes, rng);
        Ok(Self {
            input_dim,
            num_classes,
            stem,
            blocks,
            head,
        })
    }

    pub fn widths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.in_dim).collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.blocks.last().map_or(self.input_dim, |b| b.out_dim)
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if x.ncols() != self.input_dim {
            return Err(Error::shape(format!(
                "network expects {} input features, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    fn lift(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        match &self.stem {
            Some(stem) => stem.apply(x),
            None => Ok(x.clone()),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = self.lift(x)?;
        for block in &self.blocks {
            h = block.apply(&h)?;
        }
        self.head.apply(&h)
    }

    /// Input of every block plus the final features, in order
    /// (`blocks.len() + 1` arrays).
    pub fn trace(&self, x: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(x)?;
        let mut states = Vec::with_capacity(self.blocks.len() + 1);
        let mut h = self.lift(x)?;
        for block in &self.blocks {
            let next = block.apply(&h)?;
            states.push(h);
            h = next;
        }
        states.push(h);
        Ok(states)
    }

    pub fn forward_collect(&self, x: &Array2<f64>) -> Result<Collected> {
        let states = self.trace(x)?;
        let logits = self.head.apply(states.last().expect("trace is nonempty"))?;
        let pairs = self
            .eligible_active_blocks()
            .into_iter()
            .map(|k| ActivationPair {
                block: k,
                input: states[k].clone(),
                output: states[k + 1].clone(),
            })
            .collect();
        Ok(Collected { logits, pairs })
    }

    /// Residual blocks still in the Active state.
    pub fn eligible_active_blocks(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_residual() && b.is_active())
            .map(|(k, _)| k)
            .collect()
    }

    /// Number of blocks whose input and output width agree.
    pub fn msw_eligible_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.is_residual()).count()
    }

    fn block_mut(&mut self, k: usize) -> Result<&mut BlockSpec> {
        let n = self.blocks.len();
        self.blocks
            .get_mut(k)
            .ok_or_else(|| Error::invalid(format!("block {k} out of range ({n} blocks)")))
    }

    pub fn replace_with_identity(&mut self, k: usize) -> Result<()> {
        let block = self.block_mut(k)?;
        if !block.is_residual() {
            return Err(Error::invalid(format!(
                "block {k} changes width ({} -> {}) and cannot become the identity",
                block.in_dim, block.out_dim
            )));
        }
        if !block.is_active() {
            return Err(Error::invalid(format!("block {k} is already removed")));
        }
        block.state = BlockState::Identity;
        Ok(())
    }

    /// Undoes [`Self::replace_with_identity`]; weights were kept.
    pub fn restore_block(&mut self, k: usize) -> Result<()> {
        let block = self.block_mut(k)?;
        if block.state != BlockState::Identity {
            return Err(Error::invalid(format!(
                "block {k} is not an identity replacement"
            )));
        }
        block.state = BlockState::Active;
        Ok(())
    }

    /// Creates the parallel affine path for a width-changing block. The main
    /// path is unaffected until [`Self::commit_adapter`].
    pub fn attach_adapter<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Result<()> {
        let block = self.block_mut(k)?;
        if block.is_residual() {
            return Err(Error::invalid(format!(
                "block {k} keeps its width; remove it with an identity replacement instead"
            )));
        }
        if block.adapter.is_some() {
            return Err(Error::invalid(format!("block {k} already has an adapter")));
        }
        block.adapter = Some(Affine::init(block.in_dim, block.out_dim, rng));
        Ok(())
    }

    /// Switches a block to its adapter, discarding the original path from inference.
    pub fn commit_adapter(&mut self, k: usize) -> Result<()> {
        let block = self.block_mut(k)?;
        match (&block.adapter, block.state) {
            (None, _) => Err(Error::invalid(format!("block {k} has no adapter"))),
            (Some(_), BlockState::Active) => {
                block.state = BlockState::AdapterOnly;
                Ok(())
            }
            (Some(_), s) => Err(Error::invalid(format!("block {k} is in state {s:?}"))),
        }
    }

    /// Sequential parametric layers from input to logits: stem (if any) 1,
    /// Active block 2, adapter 1, identity 0, head 1.
    pub fn critical_path_length(&self) -> usize {
        usize::from(self.stem.is_some())
            + self.blocks.iter().map(BlockSpec::depth).sum::<usize>()
            + 1
    }

    /// Multiply-accumulates per sample over live affine layers.
    pub fn macs(&self) -> u64 {
        self.stem.as_ref().map_or(0, Affine::macs)
            + self.blocks.iter().map(BlockSpec::macs).sum::<u64>()
            + self.head.macs()
    }

    pub fn live_parameter_count(&self) -> usize {
        let count = |a: &Affine| a.weight.len() + a.bias.len();
        self.stem.as_ref().map_or(0, count)
            + self
                .blocks
                .iter()
                .map(BlockSpec::parameter_count)
                .sum::<usize>()
            + count(&self.head)
    }

    /// Every parameter array in declared order: stem, then per block the two
    /// layers and the adapter when present, then the head. Weight before bias.
    pub fn parameters(&self) -> Vec<&Array2<f64>> {
        let mut layers: Vec<&Affine> = Vec::new();
        if let Some(s) = &self.stem {
            layers.push(s);
        }
        for b in &self.blocks {
            layers.push(&b.first);
            layers.push(&b.second);
            if let Some(a) = &b.adapter {
                layers.push(a);
            }
        }
        layers.push(&self.head);
        layers
            .into_iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        if let Some(s) = &mut self.stem {
            out.push(&mut s.weight);
            out.push(&mut s.bias);
        }
        for b in &mut self.blocks {
            out.push(&mut b.first.weight);
            out.push(&mut b.first.bias);
            out.push(&mut b.second.weight);
            out.push(&mut b.second.bias);
            if let Some(a) = &mut b.adapter {
                out.push(&mut a.weight);
                out.push(&mut a.bias);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Parameter arrays grouped by layer owner, as index ranges into [`Self::parameters`].
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let mut groups = Vec::new();
        let mut at = 0;
        if self.stem.is_some() {
            groups.push(ParamGroup {
                name: "stem".into(),
                block: None,
                arrays: 0..2,
            });
            at = 2;
        }
        for (k, b) in self.blocks.iter().enumerate() {
            groups.push(ParamGroup {
                name: format!("block{k}"),
                block: Some(k),
                arrays: at..at + 4,
            });
            at += 4;
            if b.adapter.is_some() {
                groups.push(ParamGroup {
                    name: format!("block{k}.adapter"),
                    block: Some(k),
                    arrays: at..at + 2,
                });
                at += 2;
            }
        }
        groups.push(ParamGroup {
            name: "head".into(),
            block: None,
            arrays: at..at + 2,
        });
        groups
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.parameters()
            .into_iter()
            .flat_map(|a| a.iter().copied())
            .collect()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.parameters().iter().map(|a| a.len()).sum();
        if flat.len() != total {
            return Err(Error::shape(format!(
                "{} values for {total} parameters",
                flat.len()
            )));
        }
        let mut at = 0;
        for p in self.parameters_mut() {
            for v in p.iter_mut() {
                *v = flat[at];
                at += 1;
            }
        }
        Ok(())
    }

    /// Places every parameter array on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self
                .parameters()
                .into_iter()
                .map(|a| tape.leaf(a.clone()))
                .collect(),
        }
    }

    /// Records a forward pass on the tape, returning logits and the
    /// input/output nodes of every eligible Active block.
    pub fn record(&self, tape: &mut Tape, x: Var, params: &BoundParams) -> Result<Recorded> {
        self.check_input(tape.value(x))?;
        let groups = self.param_groups();
        let mut g = groups.iter();
        let mut h = x;
        if self.stem.is_some() {
            let r = &g.next().expect("stem group").arrays;
            h = autodiff::affine(tape, h, params.vars[r.start], params.vars[r.start + 1])?;
        }
        let mut pairs = Vec::new();
        for (k, block) in self.blocks.iter().enumerate() {
            let main = g.next().expect("block group").arrays.clone();
            let adapter = block
                .adapter
                .as_ref()
                .map(|_| g.next().expect("adapter group").arrays.clone());
            let out = match block.state {
                BlockState::Identity => h,
                BlockState::Active => block.record_active(tape, h, &params.vars[main])?,
                BlockState::AdapterOnly => {
                    let r = adapter
                        .ok_or_else(|| Error::invalid("adapter-only block without adapter"))?;
                    autodiff::affine(tape, h, params.vars[r.start], params.vars[r.start + 1])?
                }
            };
            if block.is_residual() && block.is_active() {
                pairs.push(super::TapePair {
                    block: k,
                    input: h,
                    output: out,
                });
            }
            h = out;
        }
        let r = &g.next().expect("head group").arrays;
        let logits = autodiff::affine(tape, h, params.vars[r.start], params.vars[r.start + 1])?;
        Ok(Recorded { logits, pairs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn batch(n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0)
    }

    #[test]
    fn equal_widths_are_all_eligible() {
        let net = ResidualNet::build(16, &[16, 16, 16, 16], 10, &mut rng()).unwrap();
        assert_eq!(net.blocks.len(), 4);
        assert_eq!(net.msw_eligible_count(), 4);
        assert!(net.stem.is_none());
    }

    #[test]
    fn width_change_makes_first_block_ineligible() {
        let net = ResidualNet::build(16, &[16, 32, 32], 10, &mut rng()).unwrap();
        let eligible: Vec<bool> = net.blocks.iter().map(|b| b.is_residual()).collect();
        assert_eq!(eligible, vec![false, true, true]);
    }

    #[test]
    fn build_is_deterministic_and_validates() {
        let a = ResidualNet::build(2, &[8, 8], 2, &mut rng()).unwrap();
        let b = ResidualNet::build(2, &[8, 8], 2, &mut rng()).unwrap();
        assert_eq!(a, b);
        assert!(ResidualNet::build(2, &[], 2, &mut rng()).is_err());
        assert!(ResidualNet::build(2, &[8, 0], 2, &mut rng()).is_err());
        assert!(ResidualNet::build(0, &[8], 2, &mut rng()).is_err());
    }

    #[test]
    fn identity_blocks_give_equal_pairs() {
        let mut net = ResidualNet::build(4, &[4, 4, 4], 3, &mut rng()).unwrap();
        let x = batch(5, 4);
        let c = net.forward_collect(&x).unwrap();
        assert_eq!(c.pairs.len(), 3);
        net.replace_with_identity(1).unwrap();
        let c = net.forward_collect(&x).unwrap();
        assert_eq!(
            c.pairs.iter().map(|p| p.block).collect::<Vec<_>>(),
            vec![0, 2]
        );
        for k in [0, 2] {
            net.replace_with_identity(k).unwrap();
        }
        assert!(net.forward_collect(&x).unwrap().pairs.is_empty());
        assert_eq!(net.critical_path_length(), 1);
        assert_eq!(net.trace(&x).unwrap()[3], x);
    }

    #[test]
    fn removing_zero_block_keeps_logits() {
        let mut net = ResidualNet::build(3, &[3, 3], 2, &mut rng()).unwrap();
        net.blocks[1].second = Affine::zeros(3, 3);
        let x = batch(6, 3);
        let before = net.forward(&x).unwrap();
        let macs = net.macs();
        net.replace_with_identity(1).unwrap();
        assert_eq!(net.forward(&x).unwrap(), before);
        assert!(net.macs() < macs);
        assert!(net.replace_with_identity(1).is_err());
    }

    #[test]
    fn critical_path_examples() {
        let mut net = ResidualNet::build(16, &[16, 16, 16, 16], 10, &mut rng()).unwrap();
        assert_eq!(net.critical_path_length(), 9);
        let mut net2 = ResidualNet::build(8, &[8, 16, 16, 16], 2, &mut rng()).unwrap();
        net2.attach_adapter(0, &mut rng()).unwrap();
        net2.commit_adapter(0).unwrap();
        assert_eq!(net2.critical_path_length(), 8);
        for k in 0..4 {
            net.replace_with_identity(k).unwrap();
        }
        assert_eq!(net.critical_path_length(), 1);
    }

    #[test]
    fn macs_hand_count() {
        // stem 2->4 (8), block0 4->6->6 (24+36), block1 6->6->6 (36+36), head 6->3 (18)
        let net = ResidualNet::build(2, &[4, 6], 3, &mut rng()).unwrap();
        assert_eq!(net.macs(), 8 + 60 + 72 + 18);
    }

    #[test]
    fn adapter_rules() {
        let mut net = ResidualNet::build(4, &[4, 6, 6], 2, &mut rng()).unwrap();
        assert!(net.attach_adapter(1, &mut rng()).is_err());
        assert!(net.replace_with_identity(0).is_err());
        let x = batch(4, 4);
        let before = net.forward(&x).unwrap();
        net.attach_adapter(0, &mut rng()).unwrap();
        assert!(net.attach_adapter(0, &mut rng()).is_err());
        assert_eq!(net.forward(&x).unwrap(), before);
        let macs = net.macs();
        net.commit_adapter(0).unwrap();
        assert!(net.macs() < macs);
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let mut net = ResidualNet::build(3, &[5, 5, 4], 2, &mut rng()).unwrap();
        net.replace_with_identity(2).unwrap();
        let x = batch(7, 3);
        let mut tape = Tape::new();
        let params = net.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let rec = net.record(&mut tape, xv, &params).unwrap();
        assert_eq!(tape.value(rec.logits), &net.forward(&x).unwrap());
        let collected = net.forward_collect(&x).unwrap();
        assert_eq!(rec.pairs.len(), collected.pairs.len());
        for (a, b) in rec.pairs.iter().zip(&collected.pairs) {
            assert_eq!(a.block, b.block);
            assert_eq!(tape.value(a.input), &b.input);
            assert_eq!(tape.value(a.output), &b.output);
        }
    }

    #[test]
    fn flatten_round_trip() {
        let net = ResidualNet::build(3, &[4, 4], 2, &mut rng()).unwrap();
        let flat = net.flatten();
        let mut other =
            ResidualNet::build(3, &[4, 4], 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        other.load_flat(&flat).unwrap();
        assert_eq!(other, net);
        assert!(other.load_flat(&flat[1..]).is_err());
    }
}
