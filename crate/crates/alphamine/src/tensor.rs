//! Minimal reverse-mode autodiff over a per-episode tape.
//!
//! Parameters live outside the tape in a [`ParamStore`]; tape operations
//! reference them by id and [`Tape::backward`] accumulates parameter
//! gradients into the store. Values are vectors of f64 (scalars are length
//! one). The tape is append-only, so node order is already topological and
//! the backward pass is a single reverse sweep.

use rand::Rng;

/// Index of a value node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

/// Index of a parameter tensor in the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// One named parameter tensor with its Adam moment buffers.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

impl ParamTensor {
    fn new(name: &str, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        let n = data.len();
        ParamTensor {
            name: name.to_string(),
            rows,
            cols,
            data,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone)]
pub struct ParamStore {
    pub tensors: Vec<ParamTensor>,
    pub adam_step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            tensors: Vec::new(),
            adam_step: 0,
        }
    }

    /// Glorot-uniform initialized matrix.
    pub fn add_glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, rows, cols, data)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, rows, cols, vec![0.0; rows * cols])
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> ParamId {
        self.tensors.push(ParamTensor::new(name, rows, cols, data));
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Flat read/write access across all tensors, used by finite-difference
    /// checks and checkpointing.
    pub fn flat_get(&self, mut idx: usize) -> f64 {
        for t in &self.tensors {
            if idx < t.data.len() {
                return t.data[idx];
            }
            idx -= t.data.len();
        }
        panic!("flat index out of range");
    }

    pub fn flat_add(&mut self, mut idx: usize, delta: f64) {
        for t in &mut self.tensors {
            if idx < t.data.len() {
                t.data[idx] += delta;
                return;
            }
            idx -= t.data.len();
        }
        panic!("flat index out of range");
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every parameter tensor.
#[derive(Debug, Clone)]
pub struct Grads {
    pub by_tensor: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            by_tensor: store.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.by_tensor[id.0]
    }

    pub fn flat_get(&self, mut idx: usize) -> f64 {
        for g in &self.by_tensor {
            if idx < g.len() {
                return g[idx];
            }
            idx -= g.len();
        }
        panic!("flat index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.by_tensor.iter().flatten().all(|g| g.is_finite())
    }
}

enum Op {
    /// Copy of one row of a parameter matrix.
    EmbedRow { p: ParamId, row: usize },
    /// Copy of a whole parameter tensor (vectors, scalars).
    ParamVec { p: ParamId },
    /// y = W x.
    MatVec { p: ParamId, x: ValueId },
    /// y = sum_i coeff_i * src_i.
    AccumVec { srcs: Vec<(ValueId, f64)> },
    Relu { x: ValueId },
    /// Coordinate-wise max over several equal-length vectors.
    MaxPool { srcs: Vec<ValueId>, argmax: Vec<usize> },
    /// Log-softmax over masked entries; masked-out entries are -inf.
    MaskedLogSoftmax { x: ValueId, mask: Vec<bool> },
    /// Scalar pick of one coordinate.
    Index { x: ValueId, i: usize },
    /// Scalar sum_i p_i * lp_i over unmasked entries (the negated entropy).
    NegEntropy { lp: ValueId, mask: Vec<bool> },
    /// y = sum_i coeff_i * scalar_i + c.
    AffineSum { srcs: Vec<(ValueId, f64)> },
    Square { x: ValueId },
}

struct Node {
    op: Op,
    val: Vec<f64>,
    grad: Vec<f64>,
}

/// Append-only computation tape.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].val
    }

    pub fn scalar(&self, id: ValueId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].val.len(), 1);
        self.nodes[id.0].val[0]
    }

    fn push(&mut self, op: Op, val: Vec<f64>) -> ValueId {
        let grad = vec![0.0; val.len()];
        self.nodes.push(Node { op, val, grad });
        ValueId(self.nodes.len() - 1)
    }

    pub fn embed_row(&mut self, p: ParamId, row: usize) -> ValueId {
        let val = self.store.get(p).row(row).to_vec();
        self.push(Op::EmbedRow { p, row }, val)
    }

    pub fn param_vec(&mut self, p: ParamId) -> ValueId {
        let val = self.store.get(p).data.clone();
        self.push(Op::ParamVec { p }, val)
    }

    pub fn matvec(&mut self, p: ParamId, x: ValueId) -> ValueId {
        let w = self.store.get(p);
        let xv = &self.nodes[x.0].val;
        assert_eq!(w.cols, xv.len());
        let mut y = vec![0.0; w.rows];
        for r in 0..w.rows {
            let row = w.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(xv) {
                acc += a * b;
            }
            y[r] = acc;
        }
        self.push(Op::MatVec { p, x }, y)
    }

    pub fn accum(&mut self, srcs: Vec<(ValueId, f64)>) -> ValueId {
        assert!(!srcs.is_empty());
        let n = self.nodes[srcs[0].0 .0].val.len();
        let mut y = vec![0.0; n];
        for &(s, c) in &srcs {
            for (yi, vi) in y.iter_mut().zip(&self.nodes[s.0].val) {
                *yi += c * vi;
            }
        }
        self.push(Op::AccumVec { srcs }, y)
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let y = self.nodes[x.0].val.iter().map(|&v| v.max(0.0)).collect();
        self.push(Op::Relu { x }, y)
    }

    pub fn max_pool(&mut self, srcs: Vec<ValueId>) -> ValueId {
        assert!(!srcs.is_empty());
        let n = self.nodes[srcs[0].0].val.len();
        let mut y = vec![f64::NEG_INFINITY; n];
        let mut argmax = vec![0usize; n];
        for (si, &s) in srcs.iter().enumerate() {
            for (i, &v) in self.nodes[s.0].val.iter().enumerate() {
                if v > y[i] {
                    y[i] = v;
                    argmax[i] = si;
                }
            }
        }
        self.push(Op::MaxPool { srcs, argmax }, y)
    }

    /// Masked log-softmax; panics if the mask has no legal entry.
    pub fn masked_log_softmax(&mut self, x: ValueId, mask: &[bool]) -> ValueId {
        assert!(mask.iter().any(|&m| m), "empty action mask");
        let xv = &self.nodes[x.0].val;
        assert_eq!(xv.len(), mask.len());
        let mx = xv
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = mx
            + xv.iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&v, _)| (v - mx).exp())
                .sum::<f64>()
                .ln();
        let y = xv
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { v - lse } else { f64::NEG_INFINITY })
            .collect();
        self.push(
            Op::MaskedLogSoftmax {
                x,
                mask: mask.to_vec(),
            },
            y,
        )
    }

    pub fn index(&mut self, x: ValueId, i: usize) -> ValueId {
        let v = self.nodes[x.0].val[i];
        self.push(Op::Index { x, i }, vec![v])
    }

    /// sum over legal entries of p * log p (equals minus the entropy).
    pub fn neg_entropy(&mut self, lp: ValueId, mask: &[bool]) -> ValueId {
        let v = self.nodes[lp.0]
            .val
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&l, _)| l.exp() * l)
            .sum();
        self.push(
            Op::NegEntropy {
                lp,
                mask: mask.to_vec(),
            },
            vec![v],
        )
    }

    /// Weighted sum of scalars plus a constant.
    pub fn affine_sum(&mut self, srcs: Vec<(ValueId, f64)>, c: f64) -> ValueId {
        let v = srcs
            .iter()
            .map(|&(s, k)| k * self.nodes[s.0].val[0])
            .sum::<f64>()
            + c;
        self.push(Op::AffineSum { srcs }, vec![v])
    }

    pub fn square(&mut self, x: ValueId) -> ValueId {
        let v = self.nodes[x.0].val[0];
        self.push(Op::Square { x }, vec![v * v])
    }

    /// Reverse sweep from a scalar loss; returns parameter gradients.
    pub fn backward(&mut self, loss: ValueId) -> Grads {
        assert_eq!(self.nodes[loss.0].val.len(), 1, "backward on non-scalar");
        let mut grads = Grads::zeros_like(self.store);
        for n in &mut self.nodes {
            for g in &mut n.grad {
                *g = 0.0;
            }
        }
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if node.grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            match &node.op {
                Op::EmbedRow { p, row } => {
                    let g = &mut grads.by_tensor[p.0];
                    let cols = self.store.get(*p).cols;
                    for (j, &gv) in node.grad.iter().enumerate() {
                        g[row * cols + j] += gv;
                    }
                }
                Op::ParamVec { p } => {
                    let g = &mut grads.by_tensor[p.0];
                    for (gp, &gv) in g.iter_mut().zip(&node.grad) {
                        *gp += gv;
                    }
                }
                Op::MatVec { p, x } => {
                    let w = self.store.get(*p);
                    let xv = before[x.0].val.clone();
                    let gw = &mut grads.by_tensor[p.0];
                    for r in 0..w.rows {
                        let gr = node.grad[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..w.cols {
                            gw[r * w.cols + c] += gr * xv[c];
                        }
                    }
                    let grad_out = node.grad.clone();
                    let gx = &mut before[x.0].grad;
                    for c in 0..w.cols {
                        let mut acc = 0.0;
                        for r in 0..w.rows {
                            acc += grad_out[r] * w.data[r * w.cols + c];
                        }
                        gx[c] += acc;
                    }
                }
                Op::AccumVec { srcs } => {
                    let grad_out = node.grad.clone();
                    for &(s, c) in srcs {
                        for (g, &go) in before[s.0].grad.iter_mut().zip(&grad_out) {
                            *g += c * go;
                        }
                    }
                }
                Op::Relu { x } => {
                    let grad_out = node.grad.clone();
                    let vals = before[x.0].val.clone();
                    for ((g, &go), &v) in before[x.0].grad.iter_mut().zip(&grad_out).zip(&vals) {
                        if v > 0.0 {
                            *g += go;
                        }
                    }
                }
                Op::MaxPool { srcs, argmax } => {
                    let grad_out = node.grad.clone();
                    for (i, (&go, &si)) in grad_out.iter().zip(argmax).enumerate() {
                        before[srcs[si].0].grad[i] += go;
                    }
                }
                Op::MaskedLogSoftmax { x, mask } => {
                    let grad_out = node.grad.clone();
                    let gsum: f64 = grad_out
                        .iter()
                        .zip(mask)
                        .filter(|(_, &m)| m)
                        .map(|(&g, _)| g)
                        .sum();
                    let lp = node.val.clone();
                    let gx = &mut before[x.0].grad;
                    for i in 0..lp.len() {
                        if mask[i] {
                            gx[i] += grad_out[i] - lp[i].exp() * gsum;
                        }
                    }
                }
                Op::Index { x, i } => {
                    before[x.0].grad[*i] += node.grad[0];
                }
                Op::NegEntropy { lp, mask } => {
                    let go = node.grad[0];
                    let vals = before[lp.0].val.clone();
                    for (i, g) in before[lp.0].grad.iter_mut().enumerate() {
                        if mask[i] {
                            let l = vals[i];
                            *g += go * l.exp() * (1.0 + l);
                        }
                    }
                }
                Op::AffineSum { srcs, .. } => {
                    let go = node.grad[0];
                    for &(s, k) in srcs {
                        before[s.0].grad[0] += k * go;
                    }
                }
                Op::Square { x } => {
                    let v = before[x.0].val[0];
                    before[x.0].grad[0] += 2.0 * v * node.grad[0];
                }
            }
        }
        grads
    }
}

/// Adam hyperparameters (Table-3 learning rate by default).
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One adaptive-moment update. Non-finite gradients skip the step and
/// return false.
pub fn adaptive_step(store: &mut ParamStore, grads: &Grads, cfg: AdamConfig) -> bool {
    if !grads.is_finite() {
        return false;
    }
    store.adam_step += 1;
    let t = store.adam_step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (tensor, g) in store.tensors.iter_mut().zip(&grads.by_tensor) {
        for i in 0..tensor.data.len() {
            let m = cfg.beta1 * tensor.adam_m[i] + (1.0 - cfg.beta1) * g[i];
            let v = cfg.beta2 * tensor.adam_v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            tensor.adam_m[i] = m;
            tensor.adam_v[i] = v;
            let mhat = m / bc1;
            let vhat = v / bc2;
            tensor.data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    true
}
