//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every op appends a node holding its output value and the ids of its inputs;
//! because inputs always precede outputs on the tape, the recording is acyclic
//! and a single reverse sweep visits each node once. Parameters enter the tape
//! through [`Tape::param`], which loads each [`ParamId`] at most once so its
//! gradient is the sum over all uses.
//!
//! Broadcasting is limited to bias rows ([`Tape::add_bias`]), row-vector and
//! column-vector scaling; everything else must match shapes exactly.

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Square(Var),
    Softmax(Var),
    LayerNorm(Var, Rc<Vec<f64>>),
    MulRow(Var, Var),
    MulCol(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Gather(Var, Rc<Vec<usize>>),
    ScatterAdd(Var, Rc<Vec<usize>>),
    SumAll(Var),
    RowSum(Var),
    Center(Var),
    BceLogits(Var, Rc<Vec<f64>>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation trace.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient with respect to any recorded value, `None` when the loss does
    /// not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to a parameter; zero when the parameter was not on
    /// the path to the loss (or never loaded).
    pub fn param(&self, id: ParamId, store: &ParamStore) -> Tensor {
        self.params
            .get(&id)
            .and_then(|v| self.wrt(*v))
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a constant or input leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Loads a parameter, reusing the existing leaf if it was loaded before.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    fn shape2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape2(a);
        let (m, k2) = self.shape2(b);
        if k != k2 {
            return Err(Error::dim(format!("a·bᵀ with widths {k} and {k2}")));
        }
        let mut out = vec![0.0; n * m];
        matmul_nt_into(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::MatMulNt(a, b)))
    }

    /// `out[i,j] = a[i,j] + bias[j]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.shape2(a);
        if self.value(bias).len() != m {
            return Err(Error::dim(format!(
                "bias of length {} for {} columns",
                self.value(bias).len(),
                m
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..n {
            for (o, bv) in out.row_mut(i).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    /// `input · weight + bias`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(input, weight)?;
        self.add_bias(y, bias)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        Ok(self.push(out, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        self.push(out, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Row-wise softmax (over the last axis), max-shifted.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    /// Row-wise standardisation `(x − mean) / sqrt(var + eps)`, no affine part.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (n, m) = (x.rows(), x.cols());
        let mut out = x.clone();
        let mut inv = Vec::with_capacity(n);
        for i in 0..n {
            let row = out.row_mut(i);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let s = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * s;
            }
            inv.push(s);
        }
        self.push(out, Op::LayerNorm(a, Rc::new(inv)))
    }

    /// `out[i,j] = a[i,j] · v[j]`.
    pub fn mul_row(&mut self, a: Var, v: Var) -> Result<Var> {
        let (n, m) = self.shape2(a);
        if self.value(v).len() != m {
            return Err(Error::dim("mul_row: vector length differs from columns"));
        }
        let vv = self.value(v).data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..n {
            for (o, s) in out.row_mut(i).iter_mut().zip(&vv) {
                *o *= s;
            }
        }
        Ok(self.push(out, Op::MulRow(a, v)))
    }

    /// `out[i,j] = a[i,j] · s[i]` for a column `s` of shape `n×1`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let (n, _) = self.shape2(a);
        if self.value(s).len() != n {
            return Err(Error::dim("mul_col: column length differs from rows"));
        }
        let sv = self.value(s).data().to_vec();
        let mut out = self.value(a).clone();
        for (i, s) in sv.iter().enumerate() {
            for o in out.row_mut(i) {
                *o *= s;
            }
        }
        Ok(self.push(out, Op::MulCol(a, s)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.shape2(parts[0]).0;
        if parts.iter().any(|p| self.shape2(*p).0 != n) {
            return Err(Error::dim("concat_cols: row counts differ"));
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.shape2(*p).1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(i));
            }
        }
        Ok(self.push(Tensor::matrix(n, total, out)?, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.shape2(parts[0]).1;
        if parts.iter().any(|p| self.shape2(*p).1 != m) {
            return Err(Error::dim("concat_rows: column counts differ"));
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        let n = out.len() / m.max(1);
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.shape2(a);
        if start + len > m {
            return Err(Error::dim("slice_cols out of range"));
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&x.row(i)[start..start + len]);
        }
        Ok(self.push(Tensor::matrix(n, len, out)?, Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.shape2(a);
        if start + len > n {
            return Err(Error::dim("slice_rows out of range"));
        }
        let out = self.value(a).data()[start * m..(start + len) * m].to_vec();
        Ok(self.push(Tensor::matrix(len, m, out)?, Op::SliceRows(a, start)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// `out[r] = a[index[r]]`.
    pub fn gather_rows(&mut self, a: Var, index: Rc<Vec<usize>>) -> Result<Var> {
        let (n, m) = self.shape2(a);
        if index.iter().any(|&i| i >= n) {
            return Err(Error::dim("gather_rows index out of range"));
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(index.len() * m);
        for &i in index.iter() {
            out.extend_from_slice(x.row(i));
        }
        Ok(self.push(Tensor::matrix(index.len(), m, out)?, Op::Gather(a, index)))
    }

    /// `out[index[r]] += a[r]` into `rows` output rows.
    pub fn scatter_add_rows(&mut self, a: Var, index: Rc<Vec<usize>>, rows: usize) -> Result<Var> {
        let (n, m) = self.shape2(a);
        if index.len() != n || index.iter().any(|&i| i >= rows) {
            return Err(Error::dim("scatter_add_rows index mismatch"));
        }
        let x = self.value(a);
        let mut out = vec![0.0; rows * m];
        for (r, &i) in index.iter().enumerate() {
            for (o, v) in out[i * m..(i + 1) * m].iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        Ok(self.push(Tensor::matrix(rows, m, out)?, Op::ScatterAdd(a, index)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `n×1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.rows();
        let out: Vec<f64> = (0..n).map(|i| x.row(i).iter().sum()).collect();
        self.push(Tensor::matrix(n, 1, out).expect("row_sum shape"), Op::RowSum(a))
    }

    /// Subtracts the column mean (zero centre-of-mass projection).
    pub fn center(&mut self, a: Var) -> Var {
        let out = self.value(a).centered();
        self.push(out, Op::Center(a))
    }

    /// Mean binary cross-entropy of `logits` against 0/1 `targets`, evaluated
    /// as `softplus(z) − y·z` so large logits never overflow.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != targets.len() {
            return Err(Error::dim("bce: logits and targets differ in length"));
        }
        let loss = bce_with_logits_value(z.data(), targets);
        Ok(self.push(Tensor::scalar(loss), Op::BceLogits(logits, Rc::new(targets.to_vec()))))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            nodes: grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.shape2(*a);
                let m = y.cols();
                let mut ga = vec![0.0; n * k];
                matmul_nt_into(g.data(), self.value(*b).data(), &mut ga, n, m, k);
                accumulate(grads, *a, self.value(*a), &ga);
                let mut gb = vec![0.0; k * m];
                matmul_tn_into(self.value(*a).data(), g.data(), &mut gb, k, n, m);
                accumulate(grads, *b, self.value(*b), &gb);
            }
            Op::MatMulNt(a, b) => {
                let (n, k) = self.shape2(*a);
                let m = y.cols();
                let mut ga = vec![0.0; n * k];
                matmul_into(g.data(), self.value(*b).data(), &mut ga, n, m, k);
                accumulate(grads, *a, self.value(*a), &ga);
                let mut gb = vec![0.0; m * k];
                matmul_tn_into(g.data(), self.value(*a).data(), &mut gb, m, n, k);
                accumulate(grads, *b, self.value(*b), &gb);
            }
            Op::AddBias(a, b) => {
                accumulate(grads, *a, self.value(*a), g.data());
                let m = g.cols();
                let mut gb = vec![0.0; m];
                for i in 0..g.rows() {
                    for (o, v) in gb.iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                accumulate(grads, *b, self.value(*b), &gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, self.value(*a), g.data());
                accumulate(grads, *b, self.value(*b), g.data());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, self.value(*a), g.data());
                let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
                accumulate(grads, *b, self.value(*b), &neg);
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(self.value(*b), |g, b| g * b);
                let gb = g.zip_map(self.value(*a), |g, a| g * a);
                accumulate(grads, *a, self.value(*a), ga.data());
                accumulate(grads, *b, self.value(*b), gb.data());
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                let ga = g.zip_map(bv, |g, b| g / b);
                let gb: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(bv.data())
                    .map(|((g, y), b)| -g * y / b)
                    .collect();
                accumulate(grads, *a, self.value(*a), ga.data());
                accumulate(grads, *b, bv, &gb);
            }
            Op::Scale(a, c) => {
                let ga = g.scale(*c);
                accumulate(grads, *a, self.value(*a), ga.data());
            }
            Op::AddScalar(a) => accumulate(grads, *a, self.value(*a), g.data()),
            Op::Silu(a) => {
                let ga = g.zip_map(self.value(*a), |g, x| {
                    let s = sigmoid(x);
                    g * s * (1.0 + x * (1.0 - s))
                });
                accumulate(grads, *a, self.value(*a), ga.data());
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(y, |g, s| g * s * (1.0 - s));
                accumulate(grads, *a, self.value(*a), ga.data());
            }
            Op::Sqrt(a) => {
                let ga = g.zip_map(y, |g, s| 0.5 * g / s);
                accumulate(grads, *a, self.value(*a), ga.data());
            }
            Op::Square(a) => {
                let ga = g.zip_map(self.value(*a), |g, x| 2.0 * g * x);
                accumulate(grads, *a, self.value(*a), ga.data());
            }
            Op::Softmax(a) => {
                let mut ga = vec![0.0; y.len()];
                let m = y.cols();
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..m {
                        ga[i * m + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, self.value(*a), &ga);
            }
            Op::LayerNorm(a, inv) => {
                let m = y.cols();
                let mut ga = vec![0.0; y.len()];
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let gm = gr.iter().sum::<f64>() / m as f64;
                    let gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                    for j in 0..m {
                        ga[i * m + j] = inv[i] * (gr[j] - gm - yr[j] * gy);
                    }
                }
                accumulate(grads, *a, self.value(*a), &ga);
            }
            Op::MulRow(a, v) => {
                let (xa, xv) = (self.value(*a), self.value(*v));
                let m = xa.cols();
                let mut ga = vec![0.0; xa.len()];
                let mut gv = vec![0.0; m];
                for i in 0..xa.rows() {
                    for j in 0..m {
                        ga[i * m + j] = g.get(i, j) * xv.data()[j];
                        gv[j] += g.get(i, j) * xa.get(i, j);
                    }
                }
                accumulate(grads, *a, xa, &ga);
                accumulate(grads, *v, xv, &gv);
            }
            Op::MulCol(a, s) => {
                let (xa, xs) = (self.value(*a), self.value(*s));
                let m = xa.cols();
                let mut ga = vec![0.0; xa.len()];
                let mut gs = vec![0.0; xa.rows()];
                for i in 0..xa.rows() {
                    let sv = xs.data()[i];
                    for j in 0..m {
                        ga[i * m + j] = g.get(i, j) * sv;
                        gs[i] += g.get(i, j) * xa.get(i, j);
                    }
                }
                accumulate(grads, *a, xa, &ga);
                accumulate(grads, *s, xs, &gs);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let n = y.rows();
                for p in parts {
                    let w = self.shape2(*p).1;
                    let mut gp = Vec::with_capacity(n * w);
                    for i in 0..n {
                        gp.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    accumulate(grads, *p, self.value(*p), &gp);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    accumulate(grads, *p, self.value(*p), &g.data()[offset..offset + len]);
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let xa = self.value(*a);
                let (n, m) = (xa.rows(), xa.cols());
                let w = y.cols();
                let mut ga = vec![0.0; n * m];
                for i in 0..n {
                    ga[i * m + start..i * m + start + w].copy_from_slice(g.row(i));
                }
                accumulate(grads, *a, xa, &ga);
            }
            Op::SliceRows(a, start) => {
                let xa = self.value(*a);
                let m = xa.cols();
                let mut ga = vec![0.0; xa.len()];
                ga[start * m..start * m + g.len()].copy_from_slice(g.data());
                accumulate(grads, *a, xa, &ga);
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                accumulate(grads, *a, self.value(*a), gt.data());
            }
            Op::Gather(a, index) => {
                let xa = self.value(*a);
                let m = xa.cols();
                let mut ga = vec![0.0; xa.len()];
                for (r, &i) in index.iter().enumerate() {
                    for (o, v) in ga[i * m..(i + 1) * m].iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, xa, &ga);
            }
            Op::ScatterAdd(a, index) => {
                let xa = self.value(*a);
                let mut ga = Vec::with_capacity(xa.len());
                for &i in index.iter() {
                    ga.extend_from_slice(g.row(i));
                }
                accumulate(grads, *a, xa, &ga);
            }
            Op::SumAll(a) => {
                let xa = self.value(*a);
                let ga = vec![g.item(); xa.len()];
                accumulate(grads, *a, xa, &ga);
            }
            Op::RowSum(a) => {
                let xa = self.value(*a);
                let m = xa.cols();
                let mut ga = vec![0.0; xa.len()];
                for i in 0..xa.rows() {
                    ga[i * m..(i + 1) * m].fill(g.data()[i]);
                }
                accumulate(grads, *a, xa, &ga);
            }
            Op::Center(a) => {
                let gc = g.centered();
                accumulate(grads, *a, self.value(*a), gc.data());
            }
            Op::BceLogits(a, targets) => {
                let xa = self.value(*a);
                let m = targets.len() as f64;
                let ga: Vec<f64> = xa
                    .data()
                    .iter()
                    .zip(targets.iter())
                    .map(|(z, t)| g.item() * (sigmoid(*z) - t) / m)
                    .collect();
                accumulate(grads, *a, xa, &ga);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, like: &Tensor, g: &[f64]) {
    match &mut grads[v.0] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(like.shape().to_vec(), g.to_vec()).expect("gradient shape"));
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise max-shifted softmax of a plain tensor.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// `mean_k softplus(z_k) − y_k·z_k`.
pub fn bce_with_logits_value(logits: &[f64], targets: &[f64]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| z.max(0.0) - y * z + (-z.abs()).exp().ln_1p())
        .sum();
    total / logits.len().max(1) as f64
}

/// Outcome of [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Denominator floor for relative errors: components whose gradient magnitude
/// is below this are compared on an absolute scale instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-2;

/// Compares the reverse-mode gradient of scalar `f` at `point` with central
/// finite differences (step `1e-5`).
pub fn grad_check<F>(f: F, point: &Tensor, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    const STEP: f64 = 1e-5;
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    if !tape.value(y).is_finite() {
        return Err(Error::GradCheck("non-finite value at the base point".into()));
    }
    let grads = tape.backward(y)?;
    let analytic = grads.wrt(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));

    let eval = |p: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(p);
        let out = f(&mut t, v)?;
        let val = t.value(out).item();
        if !val.is_finite() {
            return Err(Error::GradCheck("non-finite value during differencing".into()));
        }
        Ok(val)
    };

    let mut worst = (0.0, 0);
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += STEP;
        let mut minus = point.clone();
        minus.data_mut()[i] -= STEP;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * STEP);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        tol,
        passed: worst.0 <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn random_point(shape: &[usize], seed: u64) -> Tensor {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape, -2.0, 2.0, &mut r)
    }

    #[test]
    fn linear_identity_and_hand_sum() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[vec![0.5, -1.5, 2.0]]).unwrap());
        let w = t.leaf(Tensor::identity(3));
        let b = t.leaf(Tensor::vector(vec![0.0; 3]));
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[0.5, -1.5, 2.0]);

        let x = t.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let w = t.leaf(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap());
        let b = t.leaf(Tensor::vector(vec![0.0]));
        let y = t.linear(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[3.0]);
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut r = rng();
        let a = Tensor::randn(&[3, 4], &mut r);
        let w = Tensor::randn(&[4, 2], &mut r);
        let b = Tensor::randn(&[2], &mut r);
        let mut t = Tape::new();
        let (va, vw, vb) = (t.leaf(a.clone()), t.leaf(w.clone()), t.leaf(b.clone()));
        let y = t.linear(va, vw, vb).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = b.data()[j];
                for k in 0..4 {
                    s += a.get(i, k) * w.get(k, j);
                }
                assert!((t.value(y).get(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_dimension_error() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2, 3]));
        let w = t.leaf(Tensor::zeros(&[4, 2]));
        let b = t.leaf(Tensor::zeros(&[2]));
        assert!(matches!(t.linear(x, w, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn silu_values() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::vector(vec![0.0, 1.0, 40.0]));
        let y = t.silu(x);
        let v = t.value(y).data();
        assert_eq!(v[0], 0.0);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((v[1] - expected).abs() < 1e-15);
        assert!((v[1] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((v[2] - 40.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[vec![2.0; 4], vec![0.0, 3f64.ln(), 0.0, 0.0]]).unwrap());
        let y = t.softmax(x);
        let v = t.value(y);
        assert!(v.row(0).iter().all(|p| (p - 0.25).abs() < 1e-15));

        let x = t.leaf(Tensor::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap());
        let y = t.softmax(x);
        let v = t.value(y).data().to_vec();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);

        let shifted = t.leaf(Tensor::from_rows(&[vec![100.0, 100.0 + 3f64.ln()]]).unwrap());
        let ys = t.softmax(shifted);
        assert!(t.value(ys).max_abs_diff(&Tensor::from_rows(&[v]).unwrap()) < 1e-12);
    }

    #[test]
    fn quadratic_gradient() {
        let p = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let mut t = Tape::new();
        let x = t.leaf(p.clone());
        let sq = t.square(x);
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn unused_parameter_gets_zero() {
        let mut store = ParamStore::new();
        let used = store.insert("used", Tensor::vector(vec![1.0, 2.0]));
        let unused = store.insert("unused", Tensor::vector(vec![3.0]));
        let mut t = Tape::new();
        let u = t.param(&store, used);
        let loss = t.sum(u);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.param(unused, &store).data(), &[0.0]);
        assert_eq!(g.param(used, &store).data(), &[1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_usage_error() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(t.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn grad_check_linear_is_exact() {
        let w = Tensor::from_rows(&[vec![0.3], vec![-1.2], vec![2.0]]).unwrap();
        let report = grad_check(
            |t, x| {
                let wv = t.leaf(w.clone());
                let y = t.matmul(x, wv)?;
                Ok(t.sum(y))
            },
            &random_point(&[2, 3], 1),
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn grad_check_elementwise_ops() {
        type Build = fn(&mut Tape, Var) -> Result<Var>;
        let cases: Vec<(&str, Build)> = vec![
            ("silu", |t, x| {
                let y = t.silu(x);
                let y = t.square(y);
                Ok(t.sum(y))
            }),
            ("sigmoid", |t, x| {
                let y = t.sigmoid(x);
                let y = t.square(y);
                Ok(t.sum(y))
            }),
            ("softmax", |t, x| {
                let y = t.softmax(x);
                let w = t.leaf(Tensor::from_rows(&vec![vec![1.0, -2.0, 0.5, 3.0]; 3]).unwrap());
                let y = t.mul(y, w)?;
                let y = t.square(y);
                Ok(t.sum(y))
            }),
            ("layer_norm", |t, x| {
                let y = t.layer_norm(x, 1e-5);
                let w = t.leaf(Tensor::from_rows(&vec![vec![1.0, -2.0, 0.5, 3.0]; 3]).unwrap());
                let y = t.mul(y, w)?;
                let y = t.silu(y);
                Ok(t.sum(y))
            }),
            ("sqrt_div", |t, x| {
                let sq = t.square(x);
                let s = t.add_scalar(sq, 0.5);
                let r = t.sqrt(s);
                let d = t.add_scalar(r, 1.0);
                let y = t.div(x, d)?;
                Ok(t.sum(y))
            }),
            ("center_rowsum", |t, x| {
                let c = t.center(x);
                let c = t.square(c);
                let r = t.row_sum(c);
                let r = t.silu(r);
                Ok(t.sum(r))
            }),
            ("gather_scatter", |t, x| {
                let idx = Rc::new(vec![2, 0, 0, 1, 2]);
                let g = t.gather_rows(x, idx)?;
                let g = t.silu(g);
                let s = t.scatter_add_rows(g, Rc::new(vec![0, 1, 1, 0, 2]), 3)?;
                let s = t.square(s);
                Ok(t.sum(s))
            }),
            ("concat_slice_transpose", |t, x| {
                let a = t.slice_cols(x, 1, 2)?;
                let b = t.slice_rows(x, 0, 2)?;
                let bt = t.transpose(b);
                let c = t.concat_cols(&[a, x])?;
                let c = t.silu(c);
                let d = t.concat_rows(&[bt, bt])?;
                let e = t.matmul_nt(c, c)?;
                let s1 = t.sum(e);
                let s2 = t.square(d);
                let s2 = t.sum(s2);
                t.add(s1, s2)
            }),
            ("row_col_scale", |t, x| {
                let v = t.leaf(Tensor::vector(vec![0.5, -1.0, 2.0, 1.5]));
                let y = t.mul_row(x, v)?;
                let col = t.slice_cols(x, 0, 1)?;
                let z = t.mul_col(y, col)?;
                let z = t.square(z);
                Ok(t.sum(z))
            }),
            ("bce", |t, x| {
                let flat = t.slice_rows(x, 0, 1)?;
                t.bce_with_logits(flat, &[1.0, 0.0, 1.0, 0.0])
            }),
        ];
        for (name, build) in cases {
            for seed in 0..4 {
                let report = grad_check(build, &random_point(&[3, 4], seed), 1e-4).unwrap();
                assert!(report.passed, "{name} seed {seed}: {report:?}");
            }
        }
    }

    #[test]
    fn bce_zero_logits_is_ln2() {
        let v = bce_with_logits_value(&[0.0; 5], &[1.0, 0.0, 1.0, 1.0, 0.0]);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        let v = bce_with_logits_value(&[50.0, -50.0], &[1.0, 0.0]);
        assert!(v < 1e-20);
    }

    #[test]
    fn bce_matches_naive_formula() {
        let mut r = rng();
        let z = Tensor::uniform(&[8], -3.0, 3.0, &mut r);
        let y: Vec<f64> = (0..8).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let naive: f64 = -z
            .data()
            .iter()
            .zip(&y)
            .map(|(z, y)| {
                let p = 1.0 / (1.0 + (-z).exp());
                y * p.ln() + (1.0 - y) * (1.0 - p).ln()
            })
            .sum::<f64>()
            / 8.0;
        assert!((bce_with_logits_value(z.data(), &y) - naive).abs() < 1e-12);
    }

    #[test]
    fn grad_check_reports_non_finite() {
        let err = grad_check(
            |t, x| {
                let l = t.scale(x, f64::NAN);
                Ok(t.sum(l))
            },
            &Tensor::vector(vec![1.0]),
            1e-4,
        );
        assert!(matches!(err, Err(Error::GradCheck(_))));
    }
}
