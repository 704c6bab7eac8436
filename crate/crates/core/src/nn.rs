//! Layers built on the tape: linear maps, MLPs, layer norm, attention.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Affine map `x·W + b` with `W` stored as `in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Xavier-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = Tensor::uniform(&[inputs, outputs], -bound, bound, rng);
        Linear {
            w: store.insert(format!("{name}.w"), w),
            b: store.insert(format!("{name}.b"), Tensor::zeros(&[outputs])),
            inputs,
            outputs,
        }
    }

    /// All-zero weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize) -> Self {
        Linear {
            w: store.insert(format!("{name}.w"), Tensor::zeros(&[inputs, outputs])),
            b: store.insert(format!("{name}.b"), Tensor::zeros(&[outputs])),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, b)
    }
}

/// Stack of [`Linear`] layers with SiLU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply SiLU after the last layer as well.
    pub activate_last: bool,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activate_last: bool,
        rng: &mut R,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(store, &format!("{name}.{i}"), d[0], d[1], rng))
            .collect();
        Mlp { layers, activate_last }
    }

    /// Like [`Mlp::new`] but the final layer starts at zero.
    pub fn with_zero_last<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut R) -> Self {
        let k = dims.len() - 1;
        let mut layers: Vec<Linear> = dims[..k]
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(store, &format!("{name}.{i}"), d[0], d[1], rng))
            .collect();
        layers.push(Linear::zeros(store, &format!("{name}.{}", k - 1), dims[k - 1], dims[k]));
        Mlp {
            layers,
            activate_last: false,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i < last || self.activate_last {
                h = tape.silu(h);
            }
        }
        Ok(h)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }
}

/// Layer normalisation with learned gain and offset.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.insert(format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            offset: store.insert(format!("{name}.offset"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x, Self::EPS);
        let g = tape.param(store, self.gain);
        let o = tape.param(store, self.offset);
        let y = tape.mul_row(n, g)?;
        tape.add_bias(y, o)
    }
}

/// Learned lookup table.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, count: usize, dim: usize, rng: &mut R) -> Self {
        let table = Tensor::randn(&[count, dim], rng).scale(0.1);
        Embedding {
            table: store.insert(format!("{name}.table"), table),
            count,
            dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, index: &[usize]) -> Result<Var> {
        if let Some(bad) = index.iter().find(|&&i| i >= self.count) {
            return Err(Error::Vocabulary(format!(
                "index {bad} outside table of {}",
                self.count
            )));
        }
        let t = tape.param(store, self.table);
        tape.gather_rows(t, index.to_vec().into())
    }
}

/// Scaled dot-product attention split over `heads` column blocks of already
/// projected `q`, `k`, `v`. Returns the concatenated head outputs and each
/// head's `n_q × n_k` attention matrix (rows sum to one).
pub fn multi_head_attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<(Var, Vec<Var>)> {
    let d = tape.value(q).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::dim(format!("{d} columns do not split into {heads} heads")));
    }
    if tape.value(k).cols() != d || tape.value(v).cols() != d {
        return Err(Error::dim("query, key and value widths differ"));
    }
    if tape.value(k).rows() != tape.value(v).rows() {
        return Err(Error::dim("key and value lengths differ"));
    }
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dk, dk)?;
        let kh = tape.slice_cols(k, h * dk, dk)?;
        let vh = tape.slice_cols(v, h * dk, dk)?;
        let s = tape.matmul_nt(qh, kh)?;
        let s = tape.scale(s, scale);
        let a = tape.softmax(s);
        outs.push(tape.matmul(a, vh)?);
        attn.push(a);
    }
    let out = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    Ok((out, attn))
}

/// Projected multi-head attention block (`Q`, `K`, `V`, output maps).
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        kv_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Attention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), kv_dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), kv_dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        }
    }

    /// Attends from `query` rows to `context` rows; returns the output and
    /// the per-head attention matrices.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, query: Var, context: Var) -> Result<(Var, Vec<Var>)> {
        let q = self.q.forward(tape, store, query)?;
        let k = self.k.forward(tape, store, context)?;
        let v = self.v.forward(tape, store, context)?;
        let (h, attn) = multi_head_attention(tape, q, k, v, self.heads)?;
        Ok((self.o.forward(tape, store, h)?, attn))
    }
}

/// Averages per-head attention matrices into one plain tensor.
pub fn mean_attention(tape: &Tape, heads: &[Var]) -> Tensor {
    let mut acc = tape.value(heads[0]).clone();
    for h in &heads[1..] {
        acc.add_assign(tape.value(*h));
    }
    acc.scale(1.0 / heads.len() as f64)
}
