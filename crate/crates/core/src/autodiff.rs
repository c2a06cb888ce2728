//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is built fresh for every forward pass. Operations append
//! nodes in execution order, so the node list is always topologically
//! sorted and [`Tape::backward`] is a single reverse sweep.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{gemm_acc, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Assignment of tensor entries to groups, used for mean-pool + broadcast.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    ids: Vec<u32>,
    sizes: Vec<u32>,
}

impl Grouping {
    pub fn new(ids: Vec<u32>) -> Self {
        let n_groups = ids.iter().map(|&g| g as usize + 1).max().unwrap_or(0);
        let mut sizes = vec![0u32; n_groups];
        for &g in &ids {
            sizes[g as usize] += 1;
        }
        Grouping { ids, sizes }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn n_groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Mean of each group broadcast back onto its members.
    pub fn mean_broadcast(&self, x: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.sizes.len()];
        for (&g, &v) in self.ids.iter().zip(x) {
            sums[g as usize] += v;
        }
        for (s, &n) in sums.iter_mut().zip(&self.sizes) {
            *s /= n as f64;
        }
        self.ids.iter().map(|&g| sums[g as usize]).collect()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Hadamard(Var, Var),
    Add(Var, Var),
    Sigmoid(Var),
    Square(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    SumAll(Var),
    RowSoftmax(Var),
    Relu(Var),
    Tanh(Var),
    Abs(Var),
    Reshape(Var),
    Gather(Var, Arc<[u32]>),
    GroupMean(Var, Arc<Grouping>),
    CrossEntropy { logits: Var, labels: Arc<[usize]>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward/backward cycle.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf; its gradient is populated by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`, if `v`
    /// participates in it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Clears gradients so that [`Tape::backward`] may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Hadamard(a, b) | Op::Add(a, b) => {
                self.requires_grad(*a) || self.requires_grad(*b)
            }
            Op::Sigmoid(a)
            | Op::Square(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::SumAll(a)
            | Op::RowSoftmax(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Abs(a)
            | Op::Reshape(a)
            | Op::Gather(a, _)
            | Op::GroupMean(a, _) => self.requires_grad(*a),
            Op::CrossEntropy { logits, .. } => self.requires_grad(*logits),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        self.push(out, Op::Hadamard(a, b), "hadamard")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), "square")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + s);
        self.push(out, Op::AddScalar(a), "add_scalar")
    }

    pub fn sub_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.add_scalar(a, -s)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a), "sum_all")
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut out = x.clone();
        let cols = x.cols();
        for row in out.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        self.push(out, Op::RowSoftmax(a), "row_softmax")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    /// Entry-wise absolute value; the subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a), "abs")
    }

    /// Row-major reinterpretation with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let out = self.value(a).clone().reshaped(rows, cols)?;
        self.push(out, Op::Reshape(a), "reshape")
    }

    /// `out[p] = a[index[p]]` over flat row-major storage.
    pub fn gather(&mut self, a: Var, rows: usize, cols: usize, index: Arc<[u32]>) -> Result<Var> {
        let src = self.value(a);
        if index.len() != rows * cols {
            return Err(Error::dim("gather", (index.len(), 1), (rows, cols)));
        }
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= src.len()) {
            return Err(Error::Contract(format!(
                "gather index {bad} out of range for {:?}",
                src.shape()
            )));
        }
        let data = index.iter().map(|&i| src.data()[i as usize]).collect();
        let out = Tensor::new(rows, cols, data)?;
        self.push(out, Op::Gather(a, index), "gather")
    }

    /// Replaces each entry by the mean of its group.
    pub fn group_mean(&mut self, a: Var, groups: Arc<Grouping>) -> Result<Var> {
        let x = self.value(a);
        if groups.len() != x.len() {
            return Err(Error::dim("group_mean", x.shape(), (groups.len(), 1)));
        }
        let out = Tensor::new(x.rows(), x.cols(), groups.mean_broadcast(x.data()))?;
        self.push(out, Op::GroupMean(a, groups), "group_mean")
    }

    /// Mean negative log-likelihood of `labels` under the row-wise softmax
    /// of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let (batch, classes) = x.shape();
        if labels.len() != batch {
            return Err(Error::dim("cross_entropy", x.shape(), (labels.len(), 1)));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Input(format!("label {bad} out of range for {classes} classes")));
        }
        let mut probs = x.data().to_vec();
        let mut loss = 0.0;
        for (row, &label) in probs.chunks_mut(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            softmax_in_place(row);
        }
        let out = Tensor::scalar(loss / batch as f64);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.into(),
                probs,
            },
            "cross_entropy",
        )
    }

    /// Populates gradients of every node that depends on a parameter leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract(
                "backward called twice without reset_grads".into(),
            ));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(a).shape();
                let n = self.value(b).cols();
                if self.wants(a) {
                    // dA = G · Bᵀ
                    let bv = self.value(b).data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let g_row = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let b_row = &bv[p * n..(p + 1) * n];
                            da[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.accumulate(a, da);
                }
                if self.wants(b) {
                    // dB = Aᵀ · G
                    let av = self.value(a).transpose();
                    let mut db = vec![0.0; k * n];
                    gemm_acc(k, m, n, av.data(), m, g, n, &mut db, n);
                    self.accumulate(b, db);
                }
            }
            Op::Hadamard(a, b) => {
                if self.wants(a) {
                    let d = mul(g, self.value(b).data());
                    self.accumulate(a, d);
                }
                if self.wants(b) {
                    let d = mul(g, self.value(a).data());
                    self.accumulate(b, d);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[idx].value.data();
                let d = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(a, d);
            }
            Op::Square(a) => {
                let x = self.value(a).data();
                let d = g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect();
                self.accumulate(a, d);
            }
            Op::Scale(a, s) => {
                let d = g.iter().map(|g| g * s).collect();
                self.accumulate(a, d);
            }
            Op::AddScalar(a) | Op::Reshape(a) => self.accumulate(a, g.to_vec()),
            Op::Transpose(a) => {
                let (r, c) = self.nodes[idx].value.shape();
                let gt = Tensor::new(r, c, g.to_vec()).expect("grad shape").transpose();
                self.accumulate(a, gt.into_data());
            }
            Op::SumAll(a) => {
                let n = self.value(a).len();
                self.accumulate(a, vec![g[0]; n]);
            }
            Op::RowSoftmax(a) => {
                let y = &self.nodes[idx].value;
                let cols = y.cols();
                let mut d = vec![0.0; y.len()];
                for ((d_row, y_row), g_row) in d
                    .chunks_mut(cols)
                    .zip(y.data().chunks(cols))
                    .zip(g.chunks(cols))
                {
                    let dot: f64 = y_row.iter().zip(g_row).map(|(y, g)| y * g).sum();
                    for ((dj, &yj), &gj) in d_row.iter_mut().zip(y_row).zip(g_row) {
                        *dj = yj * (gj - dot);
                    }
                }
                self.accumulate(a, d);
            }
            Op::Relu(a) => {
                let x = self.value(a).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(a, d);
            }
            Op::Tanh(a) => {
                let y = self.nodes[idx].value.data();
                let d = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(a, d);
            }
            Op::Abs(a) => {
                let x = self.value(a).data();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else if x < 0.0 { -g } else { 0.0 })
                    .collect();
                self.accumulate(a, d);
            }
            Op::Gather(a, index) => {
                let mut d = vec![0.0; self.value(a).len()];
                for (&src, &gp) in index.iter().zip(g) {
                    d[src as usize] += gp;
                }
                self.accumulate(a, d);
            }
            Op::GroupMean(a, groups) => {
                // Each output entry is the mean of its group, so every member
                // receives the group's summed upstream gradient / group size.
                let d = groups.mean_broadcast(g);
                self.accumulate(a, d);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let classes = self.value(logits).cols();
                let batch = labels.len() as f64;
                let mut d = probs;
                for (row, &label) in d.chunks_mut(classes).zip(labels.iter()) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= g[0] / batch);
                }
                self.accumulate(logits, d);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central-difference oracle: perturbs every entry of `x` and rebuilds
    /// the whole graph through `f`.
    fn finite_diff(x: &Tensor, f: &dyn Fn(&mut Tape, Var) -> Var) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let eval = |delta: f64| {
                    let mut xp = x.clone();
                    xp.data_mut()[i] += delta;
                    let mut tape = Tape::new();
                    let v = tape.constant(xp);
                    let out = f(&mut tape, v);
                    tape.scalar(out)
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect()
    }

    fn analytic(x: &Tensor, f: &dyn Fn(&mut Tape, Var) -> Var) -> Vec<f64> {
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let out = f(&mut tape, v);
        tape.backward(out).unwrap();
        tape.grad(v).unwrap().to_vec()
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
            .fold(0.0, f64::max)
    }

    fn check(rows: usize, cols: usize, f: &dyn Fn(&mut Tape, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = Tensor::uniform(rows, cols, 1.5, &mut rng);
            let err = max_rel_err(&analytic(&x, f), &finite_diff(&x, f));
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    fn random_weights(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(rows, cols, 1.0, &mut rng)
    }

    #[test]
    fn matmul_grad_both_sides() {
        let w = random_weights(3, 3, 1);
        check(3, 3, &|t, a| {
            let b = t.constant(w.clone());
            let p = t.matmul(a, b).unwrap();
            t.sum_all(p).unwrap()
        });
        check(3, 3, &|t, b| {
            let a = t.constant(w.clone());
            let p = t.matmul(a, b).unwrap();
            let sq = t.square(p).unwrap();
            t.sum_all(sq).unwrap()
        });
    }

    #[test]
    fn elementwise_grads() {
        let w = random_weights(4, 4, 2);
        type Build = fn(&mut Tape, Var) -> Result<Var>;
        let ops: [Build; 8] = [
            |t, a| t.sigmoid(a),
            |t, a| t.square(a),
            |t, a| t.scale(a, -2.5),
            |t, a| t.sub_scalar(a, 0.7),
            |t, a| t.transpose(a),
            |t, a| t.row_softmax(a),
            |t, a| t.relu(a),
            |t, a| t.tanh(a),
        ];
        for op in ops {
            let w = w.clone();
            check(4, 4, &move |t, a| {
                let y = op(t, a).unwrap();
                // weight the output so the loss is not invariant (softmax rows sum to 1)
                let c = t.constant(w.clone());
                let c = if t.value(y).shape() == (4, 4) { c } else { t.transpose(c).unwrap() };
                let p = t.hadamard(y, c).unwrap();
                t.sum_all(p).unwrap()
            });
        }
    }

    #[test]
    fn hadamard_and_add_grads() {
        let w = random_weights(4, 4, 3);
        check(4, 4, &|t, a| {
            let c = t.constant(w.clone());
            let h = t.hadamard(a, c).unwrap();
            let s = t.add(h, a).unwrap();
            let q = t.square(s).unwrap();
            t.sum_all(q).unwrap()
        });
    }

    #[test]
    fn gather_group_mean_abs_grads() {
        let w = random_weights(4, 4, 4);
        let index: Arc<[u32]> = (0..16u32).rev().map(|i| i % 11).collect::<Vec<_>>().into();
        let groups = Arc::new(Grouping::new((0..16u32).map(|i| i % 3).collect()));
        check(4, 4, &|t, a| {
            let g = t.gather(a, 4, 4, index.clone()).unwrap();
            let m = t.group_mean(g, groups.clone()).unwrap();
            let c = t.constant(w.clone());
            let h = t.hadamard(m, c).unwrap();
            let ab = t.abs(a).unwrap();
            let s = t.add(h, ab).unwrap();
            let q = t.square(s).unwrap();
            t.sum_all(q).unwrap()
        });
    }

    #[test]
    fn cross_entropy_grad() {
        let labels = [3usize, 0];
        check(2, 5, &|t, a| t.cross_entropy(a, &labels).unwrap());
    }

    #[test]
    fn composite_graph_grad() {
        let w1 = random_weights(4, 3, 5);
        let w2 = random_weights(3, 2, 6);
        check(5, 4, &|t, x| {
            let a = t.constant(w1.clone());
            let b = t.constant(w2.clone());
            let h = t.matmul(x, a).unwrap();
            let h = t.tanh(h).unwrap();
            let o = t.matmul(h, b).unwrap();
            t.cross_entropy(o, &[0, 1, 1, 0, 1]).unwrap()
        });
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(1, 1));
        let s = t.sigmoid(z).unwrap();
        assert_eq!(t.scalar(s), 0.5);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.constant(random_weights(6, 7, 9).map(|v| v * 30.0));
        let s = t.row_softmax(x).unwrap();
        for row in t.value(s).data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_uniform_and_margin() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(3, 5));
        let l = t.cross_entropy(x, &[0, 2, 4]).unwrap();
        assert!((t.scalar(l) - 5f64.ln()).abs() < 1e-12);

        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let mut t = Tape::new();
            let x = t.constant(Tensor::from_rows(&[&[margin, 0.0, 0.0]]).unwrap());
            let l = t.cross_entropy(x, &[0]).unwrap();
            let l = t.scalar(l);
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(1, 3));
        assert!(matches!(t.cross_entropy(x, &[3]), Err(Error::Input(_))));
    }

    #[test]
    fn backward_simple_cases() {
        let w = random_weights(3, 2, 7);
        let mut t = Tape::new();
        let v = t.param(w.clone());
        let s = t.sum_all(v).unwrap();
        t.backward(s).unwrap();
        assert!(t.grad(v).unwrap().iter().all(|&g| g == 1.0));

        let mut t = Tape::new();
        let v = t.param(w.clone());
        let sq = t.hadamard(v, v).unwrap();
        let s = t.sum_all(sq).unwrap();
        t.backward(s).unwrap();
        for (g, x) in t.grad(v).unwrap().iter().zip(w.data()) {
            assert!((g - 2.0 * x).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_contract_errors() {
        let mut t = Tape::new();
        let v = t.param(Tensor::ones(2, 2));
        assert!(matches!(t.backward(v), Err(Error::Contract(_))));
        let s = t.sum_all(v).unwrap();
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(Error::Contract(_))));
        t.reset_grads();
        t.backward(s).unwrap();
    }

    #[test]
    fn non_finite_is_reported() {
        let mut t = Tape::new();
        let v = t.constant(Tensor::full(1, 1, 1e300));
        assert!(matches!(t.square(v), Err(Error::NonFinite("square"))));
    }

    #[test]
    fn transpose_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (m, k, n) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6));
            let a = Tensor::uniform(m, k, 2.0, &mut rng);
            let b = Tensor::uniform(k, n, 2.0, &mut rng);
            let lhs = b.transpose().matmul(&a.transpose()).unwrap();
            let rhs = a.matmul(&b).unwrap().transpose();
            assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        }
    }
}
