//! Reverse-mode tape.
//!
//! Every primitive appends one node holding its value and enough saved state
//! to run its vector-Jacobian product. `backward` walks the nodes in exact
//! reverse order and sums gradient contributions from every consumer.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, Scalar, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, trans_a: bool, trans_b: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddRow { a: Var, bias: Var },
    Scale { a: Var, factor: F },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Softmax { a: Var },
    LayerNorm { a: Var, gamma: Var, beta: Var, normed: Vec<F>, inv_std: Vec<F> },
    Relu { a: Var },
    Embedding { table: Var, ids: Vec<usize> },
    Dropout { a: Var, keep: Vec<F> },
    MaskedAdd { a: Var, mask: Arc<Tensor<F>> },
    CrossEntropy { logits: Var, targets: Vec<usize>, smoothing: F, reduction: Reduction, probs: Vec<F> },
    L2Normalize { a: Var, norms: Vec<F> },
    Ln { a: Var, floor: F },
    Sum { a: Var },
}

#[derive(Debug)]
struct Node<F> {
    value: Arc<Tensor<F>>,
    op: Op<F>,
    requires_grad: bool,
}

/// A recorded computation over dense tensors.
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    training: bool,
    rng: ChaCha8Rng,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::Shape { op, detail }
}

fn is_matrix(shape: &[usize]) -> bool {
    shape.len() == 2
}

impl<F: Scalar> Graph<F> {
    /// Evaluation graph: dropout is the identity.
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), training: false, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    /// Training graph: dropout draws its masks from a stream seeded by `seed`.
    pub fn training(seed: u64) -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), training: true, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Arc::new(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf tensor. Shared storage means binding a parameter is an `Arc` clone.
    pub fn leaf(&mut self, value: Arc<Tensor<F>>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn input(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// `op(a) · op(b)` for matrices, where `op` optionally transposes.
    pub fn matmul_ex(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if !is_matrix(&sa) || !is_matrix(&sb) {
            return Err(shape_err("matmul", format!("operands must be matrices, got {sa:?} and {sb:?}")));
        }
        let (m, ka) = if trans_a { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if ka != kb {
            return Err(shape_err("matmul", format!("inner dims differ: {sa:?}{} x {sb:?}{}", t(trans_a), t(trans_b))));
        }
        let mut out = vec![F::zero(); m * n];
        let (rsa, csa) = strides(&sa, trans_a);
        let (rsb, csb) = strides(&sb, trans_b);
        F::gemm(
            m,
            ka,
            n,
            F::one(),
            self.value(a).data(),
            rsa,
            csa,
            self.value(b).data(),
            rsb,
            csb,
            F::zero(),
            &mut out,
            n as isize,
            1,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, trans_a, trans_b }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.matmul_ex(a, b, false, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<Tensor<F>, NumericsError> {
        self.same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let cols = self.value(a).cols();
        if self.value(bias).numel() != cols {
            return Err(shape_err("add_row", format!("bias {:?} vs rows of {:?}", self.shape(bias), self.shape(a))));
        }
        let vb = self.value(bias).data().to_vec();
        let va = self.value(a);
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            for (x, &b) in row.iter_mut().zip(&vb) {
                *x += b;
            }
        }
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(out, Op::AddRow { a, bias }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: F) -> Var {
        let va = self.value(a);
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| x * factor).collect()).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale { a, factor }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let cols = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(shape_err("concat_rows", "no inputs".into())),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if !is_matrix(v.shape()) || v.cols() != cols {
                return Err(shape_err("concat_rows", format!("column count {cols} vs {:?}", v.shape())));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatRows { parts: parts.to_vec() }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(shape_err("concat_cols", "no inputs".into())),
        };
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if !is_matrix(v.shape()) || v.rows() != rows {
                return Err(shape_err("concat_cols", format!("row count {rows} vs {:?}", v.shape())));
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatCols { parts: parts.to_vec() }, rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let va = self.value(a);
        if !is_matrix(va.shape()) || start + len > va.rows() {
            return Err(shape_err("slice_rows", format!("rows {start}..{} of {:?}", start + len, va.shape())));
        }
        let c = va.cols();
        let data = va.data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![len, c], data)?, Op::SliceRows { a, start }, rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let va = self.value(a);
        if !is_matrix(va.shape()) || start + len > va.cols() {
            return Err(shape_err("slice_cols", format!("cols {start}..{} of {:?}", start + len, va.shape())));
        }
        let rows = va.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&va.row(r)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![rows, len], data)?, Op::SliceCols { a, start }, rg))
    }

    /// Row-wise softmax. Rows that are entirely `-inf` produce all zeros.
    pub fn softmax(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut data = va.data().to_vec();
        softmax_rows(&mut data, va.cols());
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::Softmax { a }, rg)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (eps = 1e-5).
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Result<Var, NumericsError> {
        let cols = self.value(a).cols();
        if self.value(gamma).numel() != cols || self.value(beta).numel() != cols {
            return Err(shape_err("layer_norm", format!("affine size vs {:?}", self.shape(a))));
        }
        let eps = F::from_f64_lossy(1e-5);
        let n = F::from_usize(cols).expect("usize fits");
        let va = self.value(a);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut normed = Vec::with_capacity(va.numel());
        let mut inv_std = Vec::with_capacity(va.rows());
        let mut out = Vec::with_capacity(va.numel());
        for row in va.data().chunks(cols) {
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / n;
            let inv = F::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &x) in row.iter().enumerate() {
                let xh = (x - mean) * inv;
                normed.push(xh);
                out.push(xh * g[j] + b[j]);
            }
        }
        let out = Tensor::new(va.shape().to_vec(), out)?;
        let rg = self.rg(&[a, gamma, beta]);
        Ok(self.push(out, Op::LayerNorm { a, gamma, beta, normed, inv_std }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| if x > F::zero() { x } else { F::zero() }).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu { a }, rg)
    }

    /// Gathers rows `ids` of `table`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let vt = self.value(table);
        let (rows, cols) = (vt.rows(), vt.cols());
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= rows {
                return Err(NumericsError::Index { op: "embedding", index: i, len: rows });
            }
            data.extend_from_slice(vt.row(i));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(Tensor::new(vec![ids.len(), cols], data)?, Op::Embedding { table, ids: ids.to_vec() }, rg))
    }

    /// Inverted dropout. Identity when the graph is not training or `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return a;
        }
        let scale = F::from_f64_lossy(1.0 / (1.0 - rate));
        let n = self.value(a).numel();
        let keep: Vec<F> = (0..n).map(|_| if self.rng.random::<f64>() < rate { F::zero() } else { scale }).collect();
        let va = self.value(a);
        let data = va.data().iter().zip(&keep).map(|(&x, &k)| x * k).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::Dropout { a, keep }, rg)
    }

    /// Adds a constant (typically 0 / -inf) mask.
    pub fn masked_add(&mut self, a: Var, mask: Arc<Tensor<F>>) -> Result<Var, NumericsError> {
        if mask.shape() != self.shape(a) {
            return Err(shape_err("masked_add", format!("mask {:?} vs scores {:?}", mask.shape(), self.shape(a))));
        }
        let va = self.value(a);
        let data = va.data().iter().zip(mask.data()).map(|(&x, &m)| x + m).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::MaskedAdd { a, mask }, rg))
    }

    /// Label-smoothed softmax cross-entropy over rows of `logits`.
    ///
    /// Per row: `(1-ε)·(-log p_gold) + ε·mean_v(-log p_v)`, reduced by mean or sum over rows.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        smoothing: f64,
        reduction: Reduction,
    ) -> Result<Var, NumericsError> {
        let vl = self.value(logits);
        let (rows, cols) = (vl.rows(), vl.cols());
        if !is_matrix(vl.shape()) || rows != targets.len() {
            return Err(shape_err("cross_entropy", format!("{} targets for logits {:?}", targets.len(), vl.shape())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(NumericsError::Index { op: "cross_entropy", index: bad, len: cols });
        }
        let eps = F::from_f64_lossy(smoothing);
        let vf = F::from_usize(cols).expect("usize fits");
        let mut probs = vl.data().to_vec();
        let mut total = F::zero();
        for (r, row) in vl.data().chunks(cols).enumerate() {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<F>().ln();
            let gold = lse - row[targets[r]];
            let mean_all = row.iter().map(|&x| lse - x).sum::<F>() / vf;
            total += (F::one() - eps) * gold + eps * mean_all;
            for (p, &x) in probs[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        if reduction == Reduction::Mean && rows > 0 {
            total = total / F::from_usize(rows).expect("usize fits");
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy { logits, targets: targets.to_vec(), smoothing: eps, reduction, probs },
            rg,
        ))
    }

    /// Row-wise `x / max(||x||, 1e-12)`; zero rows stay zero.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let cols = va.cols().max(1);
        let floor = F::from_f64_lossy(1e-12);
        let mut norms = Vec::with_capacity(va.rows());
        let mut data = Vec::with_capacity(va.numel());
        for row in va.data().chunks(cols) {
            let norm = row.iter().map(|&x| x * x).sum::<F>().sqrt().max(floor);
            norms.push(norm);
            data.extend(row.iter().map(|&x| x / norm));
        }
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::L2Normalize { a, norms }, rg)
    }

    /// Natural log with inputs clamped below at `floor`.
    pub fn ln(&mut self, a: Var, floor: f64) -> Var {
        let floor = F::from_f64_lossy(floor);
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x.max(floor).ln()).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, Op::Ln { a, floor }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(total), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1);
        let s = self.sum(a);
        self.scale(s, F::one() / F::from_usize(n).expect("usize fits"))
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var, NumericsError> {
        let mut acc = *terms.first().ok_or_else(|| shape_err("add_all", "no terms".into()))?;
        for &t in &terms[1..] {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Gradient of the last `backward` call with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: impl FnOnce(&mut [F])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![F::zero(); n]);
        contribution(slot);
    }

    fn propagate(&mut self, i: usize, g: &[F]) {
        // Temporarily take the op so saved state can be read while grads are mutated.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let out = self.nodes[i].value.clone();
        match &op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_a, trans_b } => {
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                let (m, n) = (out.shape()[0], out.shape()[1]);
                let k = if trans_a { va.shape()[0] } else { va.shape()[1] };
                let (rsa, csa) = strides(va.shape(), trans_a);
                let (rsb, csb) = strides(vb.shape(), trans_b);
                // d op(A) = G · op(B)^T, written back through op's strides.
                self.accumulate(a, |ga| {
                    F::gemm(m, n, k, F::one(), g, n as isize, 1, vb.data(), csb, rsb, F::one(), ga, rsa, csa);
                });
                // d op(B) = op(A)^T · G.
                self.accumulate(b, |gb| {
                    F::gemm(k, m, n, F::one(), va.data(), csa, rsa, g, n as isize, 1, F::one(), gb, rsb, csb);
                });
            }
            &Op::Add { a, b } => {
                self.accumulate(a, |ga| add_into(ga, g));
                self.accumulate(b, |gb| add_into(gb, g));
            }
            &Op::Sub { a, b } => {
                self.accumulate(a, |ga| add_into(ga, g));
                self.accumulate(b, |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y));
            }
            &Op::Mul { a, b } => {
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                self.accumulate(a, |ga| {
                    for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(vb.data()) {
                        *x += gy * y;
                    }
                });
                self.accumulate(b, |gb| {
                    for ((x, &gy), &y) in gb.iter_mut().zip(g).zip(va.data()) {
                        *x += gy * y;
                    }
                });
            }
            &Op::AddRow { a, bias } => {
                let cols = out.cols().max(1);
                self.accumulate(a, |ga| add_into(ga, g));
                self.accumulate(bias, |gb| {
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                });
            }
            &Op::Scale { a, factor } => {
                self.accumulate(a, |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * factor));
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.numel();
                    let slice = &g[offset..offset + n];
                    self.accumulate(p, |gp| add_into(gp, slice));
                    offset += n;
                }
            }
            Op::ConcatCols { parts } => {
                let (rows, cols) = (out.rows(), out.cols());
                let mut col0 = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.cols();
                    self.accumulate(p, |gp| {
                        for r in 0..rows {
                            add_into(&mut gp[r * w..(r + 1) * w], &g[r * cols + col0..r * cols + col0 + w]);
                        }
                    });
                    col0 += w;
                }
            }
            &Op::SliceRows { a, start } => {
                let c = out.cols();
                self.accumulate(a, |ga| add_into(&mut ga[start * c..start * c + g.len()], g));
            }
            &Op::SliceCols { a, start } => {
                let (rows, w) = (out.rows(), out.cols());
                let c = self.nodes[a.0].value.cols();
                self.accumulate(a, |ga| {
                    for r in 0..rows {
                        add_into(&mut ga[r * c + start..r * c + start + w], &g[r * w..(r + 1) * w]);
                    }
                });
            }
            &Op::Softmax { a } => {
                let cols = out.cols().max(1);
                self.accumulate(a, |ga| {
                    for ((gr, yr), xr) in g.chunks(cols).zip(out.data().chunks(cols)).zip(ga.chunks_mut(cols)) {
                        let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((x, &gy), &y) in xr.iter_mut().zip(gr).zip(yr) {
                            *x += y * (gy - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { a, gamma, beta, normed, inv_std } => {
                let cols = out.cols();
                let nf = F::from_usize(cols).expect("usize fits");
                let gv = self.nodes[gamma.0].value.clone();
                self.accumulate(*gamma, |gg| {
                    for (gr, nr) in g.chunks(cols).zip(normed.chunks(cols)) {
                        for ((x, &gy), &xh) in gg.iter_mut().zip(gr).zip(nr) {
                            *x += gy * xh;
                        }
                    }
                });
                self.accumulate(*beta, |gb| {
                    for gr in g.chunks(cols) {
                        add_into(gb, gr);
                    }
                });
                self.accumulate(*a, |ga| {
                    let mut dxh = vec![F::zero(); cols];
                    for (r, (gr, nr)) in g.chunks(cols).zip(normed.chunks(cols)).enumerate() {
                        for j in 0..cols {
                            dxh[j] = gr[j] * gv.data()[j];
                        }
                        let s1: F = dxh.iter().copied().sum();
                        let s2: F = dxh.iter().zip(nr).map(|(&d, &x)| d * x).sum();
                        let scale = inv_std[r] / nf;
                        for j in 0..cols {
                            ga[r * cols + j] += scale * (nf * dxh[j] - s1 - nr[j] * s2);
                        }
                    }
                });
            }
            &Op::Relu { a } => {
                self.accumulate(a, |ga| {
                    for ((x, &gy), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        if y > F::zero() {
                            *x += gy;
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let c = out.cols();
                self.accumulate(*table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * c..(id + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::Dropout { a, keep } => {
                self.accumulate(*a, |ga| {
                    for ((x, &gy), &k) in ga.iter_mut().zip(g).zip(keep) {
                        *x += gy * k;
                    }
                });
            }
            Op::MaskedAdd { a, mask } => {
                self.accumulate(*a, |ga| {
                    for ((x, &gy), &m) in ga.iter_mut().zip(g).zip(mask.data()) {
                        if m.is_finite() {
                            *x += gy;
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, smoothing, reduction, probs } => {
                let cols = self.nodes[logits.0].value.cols();
                let rows = targets.len();
                let scale = match reduction {
                    Reduction::Mean if rows > 0 => g[0] / F::from_usize(rows).expect("usize fits"),
                    _ => g[0],
                };
                let uniform = *smoothing / F::from_usize(cols).expect("usize fits");
                let gold_w = F::one() - *smoothing;
                self.accumulate(*logits, |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &mut gl[r * cols..(r + 1) * cols];
                        for (j, x) in row.iter_mut().enumerate() {
                            let q = if j == t { gold_w + uniform } else { uniform };
                            *x += scale * (probs[r * cols + j] - q);
                        }
                    }
                });
            }
            Op::L2Normalize { a, norms } => {
                let cols = out.cols().max(1);
                let floor = F::from_f64_lossy(1e-12);
                self.accumulate(*a, |ga| {
                    for (r, ((gr, yr), xr)) in g.chunks(cols).zip(out.data().chunks(cols)).zip(ga.chunks_mut(cols)).enumerate() {
                        let n = norms[r];
                        if n > floor {
                            let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                            for ((x, &gy), &y) in xr.iter_mut().zip(gr).zip(yr) {
                                *x += (gy - y * dot) / n;
                            }
                        } else {
                            for (x, &gy) in xr.iter_mut().zip(gr) {
                                *x += gy / n;
                            }
                        }
                    }
                });
            }
            &Op::Ln { a, floor } => {
                let va = self.nodes[a.0].value.clone();
                self.accumulate(a, |ga| {
                    for ((x, &gy), &v) in ga.iter_mut().zip(g).zip(va.data()) {
                        if v > floor {
                            *x += gy / v;
                        }
                    }
                });
            }
            &Op::Sum { a } => {
                self.accumulate(a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
        }
        self.nodes[i].op = op;
    }
}

fn t(flag: bool) -> &'static str {
    if flag {
        "ᵀ"
    } else {
        ""
    }
}

fn strides(shape: &[usize], trans: bool) -> (isize, isize) {
    let cols = shape[1] as isize;
    if trans {
        (1, cols)
    } else {
        (cols, 1)
    }
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// In-place row softmax with max subtraction; fully `-inf` rows become zeros.
pub fn softmax_rows<F: Scalar>(data: &mut [F], cols: usize) {
    if cols == 0 {
        return;
    }
    for row in data.chunks_mut(cols) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        if max == F::neg_infinity() {
            row.iter_mut().for_each(|x| *x = F::zero());
            continue;
        }
        let mut total = F::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x = *x / total;
        }
    }
}
