use ndarray::{Array2, Axis, Zip};

use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Permutation chosen by a forward sort: output position `i` holds input
/// element `permutation[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortRecord {
    pub permutation: Vec<usize>,
}

impl SortRecord {
    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    /// Stable ascending argsort of `values`.
    pub fn argsort(values: impl Iterator<Item = f64>) -> Self {
        let values: Vec<f64> = values.collect();
        let mut permutation: Vec<usize> = (0..values.len()).collect();
        permutation.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        Self { permutation }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    AbsPow(Var, f64),
    Root(Var, f64),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumCols(Var),
    BroadcastRows(Var),
    SortColumns(Var, Vec<SortRecord>),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Array2<f64>,
    },
    PairwiseSqDist(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Record of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    // FNV-1a over every discrete choice made in the forward pass (relu masks,
    // sort orders, clamps, argmax picks).
    signature: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            signature: FNV_OFFSET,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Hash of all discrete forward decisions so far. Two evaluations with
    /// equal signatures went through the same smooth piece of the function.
    pub fn signature(&self) -> u64 {
        self.signature
    }

    pub fn record_decision(&mut self, choice: u64) {
        for byte in choice.to_le_bytes() {
            self.signature ^= u64::from(byte);
            self.signature = self.signature.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape(format!(
                "matmul: {:?} x {:?}",
                va.dim(),
                vb.dim()
            )));
        }
        let out = va.dot(vb);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x + b` with the 1×c row `b` broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(Error::shape(format!(
                "bias {:?} for input {:?}",
                vb.dim(),
                vx.dim()
            )));
        }
        let out = vx + vb;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "div")?;
        let out = self.value(a) / self.value(b);
        Ok(self.push(out, Op::Div(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x) * s;
        self.push(out, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x) + s;
        self.push(out, Op::AddScalar(x))
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| if v > 0.0 { v } else { 0.0 });
        let bits: Vec<u64> = self.value(x).iter().map(|&v| u64::from(v > 0.0)).collect();
        for b in bits {
            self.record_decision(b);
        }
        self.push(out, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::exp);
        self.push(out, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::ln);
        self.push(out, Op::Ln(x))
    }

    /// Elementwise `|x|^p`.
    pub fn abs_pow(&mut self, x: Var, p: f64) -> Var {
        let out = self.value(x).mapv(|v| v.abs().powf(p));
        self.push(out, Op::AbsPow(x, p))
    }

    /// Elementwise `x^{1/p}` on nonnegative input. The derivative at 0 is
    /// taken to be 0.
    pub fn root(&mut self, x: Var, p: f64) -> Result<Var> {
        if let Some(bad) = self.value(x).iter().find(|v| **v < 0.0) {
            return Err(Error::invalid(format!("root of negative value {bad}")));
        }
        let out = if p == 2.0 {
            self.value(x).mapv(f64::sqrt)
        } else {
            self.value(x).mapv(|v| v.powf(1.0 / p))
        };
        let zeros: Vec<u64> = self.value(x).iter().map(|&v| u64::from(v == 0.0)).collect();
        for z in zeros {
            self.record_decision(z);
        }
        Ok(self.push(out, Op::Root(x, p)))
    }

    /// Elementwise `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let out = self.value(x).mapv(|v| v.max(floor));
        let bits: Vec<u64> = self
            .value(x)
            .iter()
            .map(|&v| u64::from(v > floor))
            .collect();
        for b in bits {
            self.record_decision(b);
        }
        self.push(out, Op::ClampMin(x, floor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / v.len() as f64;
        self.push(Array2::from_elem((1, 1), m), Op::Mean(x))
    }

    /// Column means: n×d → 1×d.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.nrows() as f64;
        let out = v.sum_axis(Axis(0)).insert_axis(Axis(0)) / n;
        self.push(out, Op::MeanRows(x))
    }

    /// Row sums: n×d → n×1.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let out = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::SumCols(x))
    }

    /// Repeats a 1×d row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let v = self.value(x);
        if v.nrows() != 1 {
            return Err(Error::shape(format!(
                "broadcast_rows expects one row, got {:?}",
                v.dim()
            )));
        }
        let out = v
            .broadcast((n, v.ncols()))
            .expect("1xd broadcasts to nxd")
            .to_owned();
        Ok(self.push(out, Op::BroadcastRows(x)))
    }

    /// Sorts every column ascending (stable), freezing each permutation for
    /// the backward pass.
    pub fn sort_columns(&mut self, x: Var) -> (Var, Vec<SortRecord>) {
        let v = self.value(x);
        let records: Vec<SortRecord> = v
            .columns()
            .into_iter()
            .map(|c| SortRecord::argsort(c.iter().copied()))
            .collect();
        let mut out = Array2::zeros(v.dim());
        for (c, rec) in records.iter().enumerate() {
            for (i, &src) in rec.permutation.iter().enumerate() {
                out[[i, c]] = v[[src, c]];
            }
        }
        let decisions: Vec<u64> = records
            .iter()
            .flat_map(|r| r.permutation.iter().map(|&i| i as u64))
            .collect();
        for d in decisions {
            self.record_decision(d);
        }
        let var = self.push(out, Op::SortColumns(x, records.clone()));
        (var, records)
    }

    /// Mean softmax cross-entropy of `logits` (n×c) against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let (n, c) = v.dim();
        if n == 0 {
            return Err(Error::invalid("cross-entropy over an empty batch"));
        }
        if labels.len() != n {
            return Err(Error::shape(format!(
                "{} labels for {n} logit rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = Array2::zeros((n, c));
        let mut loss = 0.0;
        for (i, row) in v.rows().into_iter().enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_norm = max + sum.ln();
            loss += log_norm - row[labels[i]];
            for (j, x) in row.iter().enumerate() {
                probs[[i, j]] = (x - log_norm).exp();
            }
        }
        let out = Array2::from_elem((1, 1), loss / n as f64);
        Ok(self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// `D[i, j] = ‖a_i − b_j‖²` over the rows of `a` and `b`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.ncols() {
            return Err(Error::shape(format!(
                "pairwise distances: {:?} vs {:?}",
                va.dim(),
                vb.dim()
            )));
        }
        let mut out = Array2::zeros((va.nrows(), vb.nrows()));
        for (i, x) in va.rows().into_iter().enumerate() {
            for (j, y) in vb.rows().into_iter().enumerate() {
                out[[i, j]] = x.iter().zip(y.iter()).map(|(u, w)| (u - w) * (u - w)).sum();
            }
        }
        Ok(self.push(out, Op::PairwiseSqDist(a, b)))
    }

    /// Gradients of the 1×1 node `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).dim() != (1, 1) {
            return Err(Error::shape(format!(
                "backward needs a scalar output, got {:?}",
                self.value(out).dim()
            )));
        }
        let mut grads: Vec<Array2<f64>> = self
            .nodes
            .iter()
            .map(|n| Array2::zeros(n.value.dim()))
            .collect();
        grads[out.0][[0, 0]] = 1.0;

        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            if g.iter().all(|v| *v == 0.0) {
                grads[idx] = g;
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = g;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Array2<f64>, grads: &mut [Array2<f64>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = g.dot(&self.value(*b).t());
                let db = self.value(*a).t().dot(g);
                grads[a.0] += &da;
                grads[b.0] += &db;
            }
            Op::AddBias(x, b) => {
                grads[x.0] += g;
                grads[b.0] += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
            }
            Op::Add(a, b) => {
                grads[a.0] += g;
                grads[b.0] += g;
            }
            Op::Sub(a, b) => {
                grads[a.0] += g;
                grads[b.0] -= g;
            }
            Op::Mul(a, b) => {
                let da = g * self.value(*b);
                let db = g * self.value(*a);
                grads[a.0] += &da;
                grads[b.0] += &db;
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = g / vb;
                let db = Zip::from(g)
                    .and(va)
                    .and(vb)
                    .map_collect(|&g, &x, &y| -g * x / (y * y));
                grads[a.0] += &da;
                grads[b.0] += &db;
            }
            Op::Scale(x, s) => grads[x.0].scaled_add(*s, g),
            Op::AddScalar(x) => grads[x.0] += g,
            Op::Relu(x) => {
                let d = Zip::from(g)
                    .and(self.value(*x))
                    .map_collect(|&g, &v| if v > 0.0 { g } else { 0.0 });
                grads[x.0] += &d;
            }
            Op::Exp(x) => grads[x.0] += &(g * &node.value),
            Op::Ln(x) => grads[x.0] += &(g / self.value(*x)),
            Op::AbsPow(x, p) => {
                let p = *p;
                let d = Zip::from(g).and(self.value(*x)).map_collect(|&g, &v| {
                    if v == 0.0 {
                        0.0
                    } else {
                        g * p * v.abs().powf(p - 1.0) * v.signum()
                    }
                });
                grads[x.0] += &d;
            }
            Op::Root(x, p) => {
                let p = *p;
                let d = Zip::from(g)
                    .and(self.value(*x))
                    .and(&node.value)
                    .map_collect(|&g, &v, &y| if v == 0.0 { 0.0 } else { g * y / (p * v) });
                grads[x.0] += &d;
            }
            Op::ClampMin(x, floor) => {
                let f = *floor;
                let d = Zip::from(g)
                    .and(self.value(*x))
                    .map_collect(|&g, &v| if v > f { g } else { 0.0 });
                grads[x.0] += &d;
            }
            Op::Sum(x) => {
                let s = g[[0, 0]];
                grads[x.0].mapv_inplace(|v| v + s);
            }
            Op::Mean(x) => {
                let s = g[[0, 0]] / self.value(*x).len() as f64;
                grads[x.0].mapv_inplace(|v| v + s);
            }
            Op::MeanRows(x) => {
                let n = self.value(*x).nrows() as f64;
                let row = g / n;
                grads[x.0] += &row;
            }
            Op::SumCols(x) => {
                grads[x.0] += g;
            }
            Op::BroadcastRows(x) => {
                grads[x.0] += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
            }
            Op::SortColumns(x, records) => {
                let target = &mut grads[x.0];
                for (c, rec) in records.iter().enumerate() {
                    for (i, &src) in rec.permutation.iter().enumerate() {
                        target[[src, c]] += g[[i, c]];
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = probs.nrows() as f64;
                let s = g[[0, 0]] / n;
                let target = &mut grads[logits.0];
                for (i, &label) in labels.iter().enumerate() {
                    for j in 0..probs.ncols() {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        target[[i, j]] += s * (probs[[i, j]] - onehot);
                    }
                }
            }
            Op::PairwiseSqDist(a, b) => {
                let (va, vb) = (self.value(*a).clone(), self.value(*b).clone());
                let mut da = Array2::zeros(va.dim());
                let mut db = Array2::zeros(vb.dim());
                for i in 0..va.nrows() {
                    for j in 0..vb.nrows() {
                        let w = 2.0 * g[[i, j]];
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..va.ncols() {
                            let diff = va[[i, k]] - vb[[j, k]];
                            da[[i, k]] += w * diff;
                            db[[j, k]] -= w * diff;
                        }
                    }
                }
                grads[a.0] += &da;
                grads[b.0] += &db;
            }
        }
    }
}

/// Per-node gradients from one backward pass; every slot starts at zero.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> &Array2<f64> {
        &self.grads[v.0]
    }
}
