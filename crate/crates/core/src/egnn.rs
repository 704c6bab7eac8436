//! E(n)-equivariant graph convolution over the complete atom graph.
//!
//! Node state is a pair of invariant features `h` (N×d) and coordinates `x`
//! (N×3). Each layer computes messages from `h_i`, `h_j`, `d_ij²` and an
//! optional per-edge attribute, gates them with a sigmoid weight, updates `h`
//! residually and moves every atom along the `(x_i − x_j)/(d_ij + 1)`
//! directions scaled by a bounded, learned per-edge scalar.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Added under the square root so the distance stays differentiable when two
/// atoms coincide.
const DIST_EPS: f64 = 1e-12;

/// Per-edge coordinate weights are squashed to `±COORD_RANGE·tanh`, so a
/// layer cannot move atoms by more than this times the neighbour count.
pub const COORD_RANGE: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgnnConfig {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for EgnnConfig {
    fn default() -> Self {
        EgnnConfig { layers: 4, hidden: 64 }
    }
}

impl EgnnConfig {
    /// Nine layers of width 256.
    pub fn full_scale() -> Self {
        EgnnConfig { layers: 9, hidden: 256 }
    }
}

/// All ordered pairs `(i, j)`, `i ≠ j`, in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    pub atoms: usize,
    pub src: Rc<Vec<usize>>,
    pub dst: Rc<Vec<usize>>,
}

impl EdgeIndex {
    pub fn complete(atoms: usize) -> Self {
        let mut src = Vec::with_capacity(atoms * atoms.saturating_sub(1));
        let mut dst = Vec::with_capacity(src.capacity());
        for i in 0..atoms {
            for j in 0..atoms {
                if i != j {
                    src.push(i);
                    dst.push(j);
                }
            }
        }
        EdgeIndex {
            atoms,
            src: Rc::new(src),
            dst: Rc::new(dst),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Position of the edge `(i, j)`.
    pub fn position(&self, i: usize, j: usize) -> usize {
        debug_assert!(i != j);
        i * (self.atoms - 1) + if j < i { j } else { j - 1 }
    }
}

/// Subtracts the column mean; idempotent.
pub fn zero_com_project(x: &Tensor) -> Tensor {
    x.centered()
}

fn weight<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> ParamId {
    let bound = (6.0 / (fan_in + cols) as f64).sqrt();
    store.insert(name, Tensor::uniform(&[rows, cols], -bound, bound, rng))
}

/// One equivariant layer. The first layer of the message network is split
/// by input block so the per-atom parts are computed once per atom rather
/// than once per edge.
#[derive(Clone, Debug)]
pub struct Egcl {
    pub dim: usize,
    pub edge_dim: usize,
    e_src: Linear,
    e_dst: ParamId,
    e_dist: ParamId,
    e_attr: Option<ParamId>,
    e_out: Linear,
    gate: Mlp,
    node: Mlp,
    coord: Mlp,
}

impl Egcl {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        edge_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = 2 * dim + 1 + edge_dim;
        let e_src = Linear {
            w: weight(store, &format!("{name}.msg.src.w"), dim, hidden, fan_in, rng),
            b: store.insert(format!("{name}.msg.src.b"), Tensor::zeros(&[hidden])),
            inputs: dim,
            outputs: hidden,
        };
        let e_dst = weight(store, &format!("{name}.msg.dst"), dim, hidden, fan_in, rng);
        let e_dist = weight(store, &format!("{name}.msg.dist"), 1, hidden, fan_in, rng);
        let e_attr = (edge_dim > 0).then(|| weight(store, &format!("{name}.msg.attr"), edge_dim, hidden, fan_in, rng));
        Egcl {
            dim,
            edge_dim,
            e_src,
            e_dst,
            e_dist,
            e_attr,
            e_out: Linear::new(store, &format!("{name}.msg.out"), hidden, hidden, rng),
            gate: Mlp::new(store, &format!("{name}.gate"), &[hidden, hidden, 1], false, rng),
            node: Mlp::new(store, &format!("{name}.node"), &[dim + hidden, hidden, dim], false, rng),
            coord: Mlp::with_zero_last(store, &format!("{name}.coord"), &[hidden, hidden, 1], rng),
        }
    }

    /// Returns the updated `(h, x)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        x: Var,
        edges: &EdgeIndex,
        attr: Option<Var>,
    ) -> Result<(Var, Var)> {
        let n = tape.value(h).rows();
        if n != edges.atoms || tape.value(x).rows() != n || tape.value(x).cols() != 3 {
            return Err(Error::dim(format!(
                "layer on {} atoms got h {:?} and x {:?}",
                edges.atoms,
                tape.value(h).shape(),
                tape.value(x).shape()
            )));
        }
        if tape.value(h).cols() != self.dim {
            return Err(Error::dim(format!(
                "layer expects {} features, got {}",
                self.dim,
                tape.value(h).cols()
            )));
        }
        if let Some(a) = attr {
            if tape.value(a).rows() != edges.len() || tape.value(a).cols() != self.edge_dim {
                return Err(Error::dim(format!(
                    "edge attributes {:?} for {} edges of width {}",
                    tape.value(a).shape(),
                    edges.len(),
                    self.edge_dim
                )));
            }
        } else if self.edge_dim > 0 {
            return Err(Error::dim("layer expects edge attributes"));
        }

        let xi = tape.gather_rows(x, edges.src.clone())?;
        let xj = tape.gather_rows(x, edges.dst.clone())?;
        let diff = tape.sub(xi, xj)?;
        let sq = tape.square(diff);
        let d2 = tape.row_sum(sq);

        // m_ij = φ_e(h_i, h_j, d², a)
        let hs = self.e_src.forward(tape, store, h)?;
        let wd = tape.param(store, self.e_dst);
        let hd = tape.matmul(h, wd)?;
        let mut pre = tape.gather_rows(hs, edges.src.clone())?;
        let hd = tape.gather_rows(hd, edges.dst.clone())?;
        pre = tape.add(pre, hd)?;
        let wdist = tape.param(store, self.e_dist);
        let dd = tape.matmul(d2, wdist)?;
        pre = tape.add(pre, dd)?;
        if let (Some(a), Some(wa)) = (attr, self.e_attr) {
            let wa = tape.param(store, wa);
            let aa = tape.matmul(a, wa)?;
            pre = tape.add(pre, aa)?;
        }
        let m = tape.silu(pre);
        let m = self.e_out.forward(tape, store, m)?;
        let m = tape.silu(m);

        let g = self.gate.forward(tape, store, m)?;
        let g = tape.sigmoid(g);
        let gm = tape.mul_col(m, g)?;
        let agg = tape.scatter_add_rows(gm, edges.src.clone(), n)?;
        let hin = tape.concat_cols(&[h, agg])?;
        let dh = self.node.forward(tape, store, hin)?;
        let h_new = tape.add(h, dh)?;

        let d = tape.add_scalar(d2, DIST_EPS);
        let d = tape.sqrt(d);
        let d1 = tape.add_scalar(d, 1.0);
        let ones = tape.leaf(Tensor::full(&[edges.len(), 1], 1.0));
        let inv = tape.div(ones, d1)?;
        let phi = self.coord.forward(tape, store, m)?;
        // tanh(y) = 2σ(2y) − 1
        let phi = tape.scale(phi, 2.0);
        let phi = tape.sigmoid(phi);
        let phi = tape.scale(phi, 2.0 * COORD_RANGE);
        let phi = tape.add_scalar(phi, -COORD_RANGE);
        let w = tape.mul(inv, phi)?;
        let step = tape.mul_col(diff, w)?;
        let dx = tape.scatter_add_rows(step, edges.src.clone(), n)?;
        let x_new = tape.add(x, dx)?;
        Ok((h_new, x_new))
    }
}

/// Sequential stack of [`Egcl`] layers sharing one node width.
#[derive(Clone, Debug)]
pub struct Egnn {
    pub layers: Vec<Egcl>,
}

impl Egnn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        edge_dim: usize,
        config: &EgnnConfig,
        rng: &mut R,
    ) -> Self {
        Egnn {
            layers: (0..config.layers)
                .map(|l| Egcl::new(store, &format!("{name}.{l}"), dim, edge_dim, config.hidden, rng))
                .collect(),
        }
    }

    /// Runs every layer; a non-finite value after layer `l` is reported as
    /// [`Error::Numeric`] with that index.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mut h: Var,
        mut x: Var,
        edges: &EdgeIndex,
        attr: Option<Var>,
    ) -> Result<(Var, Var)> {
        for (l, layer) in self.layers.iter().enumerate() {
            (h, x) = layer.forward(tape, store, h, x, edges, attr)?;
            if !tape.value(h).is_finite() {
                return Err(Error::Numeric {
                    layer: l,
                    what: "non-finite node features".into(),
                });
            }
            if !tape.value(x).is_finite() {
                return Err(Error::Numeric {
                    layer: l,
                    what: "non-finite coordinates".into(),
                });
            }
        }
        Ok((h, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(layers: usize, edge_dim: usize) -> (ParamStore, Egnn, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let cfg = EgnnConfig { layers, hidden: 12 };
        let net = Egnn::new(&mut store, "g", 5, edge_dim, &cfg, &mut rng);
        // Give the coordinate heads nonzero weights so the tests see motion.
        for (id, name, _) in store
            .iter()
            .map(|(i, n, t)| (i, n.to_string(), t.clone()))
            .collect::<Vec<_>>()
        {
            if name.contains(".coord.1.") {
                let shape = store.get(id).shape().to_vec();
                *store.get_mut(id) = Tensor::uniform(&shape, -0.3, 0.3, &mut rng);
            }
        }
        (store, net, rng)
    }

    #[test]
    fn edge_positions_are_lexicographic() {
        let e = EdgeIndex::complete(4);
        assert_eq!(e.len(), 12);
        for k in 0..e.len() {
            assert_eq!(e.position(e.src[k], e.dst[k]), k);
        }
    }

    #[test]
    fn projection_examples() {
        let x = Tensor::from_rows(&[vec![2.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        let p = zero_com_project(&x);
        assert_eq!(p.data(), &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        assert_eq!(zero_com_project(&p), p);
    }

    #[test]
    fn single_atom_keeps_coordinates() {
        let (store, net, mut rng) = setup(2, 0);
        let mut t = Tape::new();
        let h = t.leaf(Tensor::randn(&[1, 5], &mut rng));
        let x0 = Tensor::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap();
        let x = t.leaf(x0.clone());
        let (h2, x2) = net
            .forward(&mut t, &store, h, x, &EdgeIndex::complete(1), None)
            .unwrap();
        assert_eq!(t.value(x2), &x0);
        assert_eq!(t.value(h2).shape(), &[1, 5]);
    }

    #[test]
    fn zero_layers_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Egnn::new(&mut store, "g", 5, 0, &EgnnConfig { layers: 0, hidden: 8 }, &mut rng);
        let mut t = Tape::new();
        let h = t.leaf(Tensor::randn(&[3, 5], &mut rng));
        let x = t.leaf(Tensor::randn(&[3, 3], &mut rng));
        assert_eq!(
            net.forward(&mut t, &store, h, x, &EdgeIndex::complete(3), None)
                .unwrap(),
            (h, x)
        );
    }

    #[test]
    fn nan_reports_layer() {
        let (store, net, mut rng) = setup(3, 0);
        let mut t = Tape::new();
        let mut hv = Tensor::randn(&[3, 5], &mut rng);
        hv.data_mut()[0] = f64::NAN;
        let h = t.leaf(hv);
        let x = t.leaf(Tensor::randn(&[3, 3], &mut rng));
        let err = net
            .forward(&mut t, &store, h, x, &EdgeIndex::complete(3), None)
            .unwrap_err();
        assert!(matches!(err, Error::Numeric { layer: 0, .. }), "{err}");
    }

    #[test]
    fn layer_gradients_match_differences() {
        let (store, net, mut rng) = setup(2, 2);
        let edges = EdgeIndex::complete(4);
        let h0 = Tensor::randn(&[4, 5], &mut rng);
        let a0 = Tensor::randn(&[12, 2], &mut rng);
        let x0 = Tensor::randn(&[4, 3], &mut rng);
        let loss = |t: &mut Tape, h: Var, x: Var, a: Var| -> Result<Var> {
            let (h, x) = net.forward(t, &store, h, x, &edges, Some(a))?;
            let hs = t.square(h);
            let xs = t.square(x);
            let a = t.sum(hs);
            let b = t.sum(xs);
            t.add(a, b)
        };
        let wrt_x = grad_check(
            |t, x| {
                let h = t.leaf(h0.clone());
                let a = t.leaf(a0.clone());
                loss(t, h, x, a)
            },
            &x0,
            1e-4,
        )
        .unwrap();
        assert!(wrt_x.passed, "{wrt_x:?}");
        let wrt_h = grad_check(
            |t, h| {
                let x = t.leaf(x0.clone());
                let a = t.leaf(a0.clone());
                loss(t, h, x, a)
            },
            &h0,
            1e-4,
        )
        .unwrap();
        assert!(wrt_h.passed, "{wrt_h:?}");
    }
}
