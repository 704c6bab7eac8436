//! Checks shared by the detailed suites and the acceptance run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2g_core::autodiff::{grad_check, GRAD_CHECK_FLOOR};
use s2g_core::chem::Element;
use s2g_core::diffusion::{centered_noise, ldm_loss, make_schedule, Denoiser, DenoiserConfig, ScheduleKind};
use s2g_core::egnn::{EdgeIndex, Egnn, EgnnConfig};
use s2g_core::encoder::{EncoderConfig, SpectralClassifier, FORMULA_VOCAB};
use s2g_core::latent::{AtomVocabulary, EdgeBuilder, GeoAutoencoder, LatentConfig};
use s2g_core::{ParamId, ParamStore, Result, Tape, Tensor, Var};

use super::{random_rotation, random_translation, randomize_coord_heads, transform};

pub const CASES: usize = 10;
pub const COORD_TOL: f64 = 1e-8;
pub const FEATURE_TOL: f64 = 1e-10;
pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_POINTS: usize = 20;

pub fn small_encoder() -> EncoderConfig {
    EncoderConfig {
        points: 256,
        patch: 64,
        dim: 8,
        heads: 2,
        layers: 1,
        ff: 16,
        max_formula_tokens: 6,
        decoder_layers: 1,
    }
}

pub fn small_latent() -> LatentConfig {
    LatentConfig {
        atom_dim: 4,
        edge_dim: 4,
        heads: 2,
        inject_layers: 1,
        encoder: EgnnConfig { layers: 1, hidden: 8 },
        decoder: EgnnConfig { layers: 2, hidden: 8 },
        ..LatentConfig::default()
    }
}

pub fn small_denoiser() -> DenoiserConfig {
    DenoiserConfig {
        time_dim: 4,
        node_dim: 8,
        egnn: EgnnConfig { layers: 2, hidden: 8 },
    }
}

pub const ELEMENTS: [Element; 5] = [Element::C, Element::O, Element::N, Element::H, Element::H];

/// Every network of the model at small width, with moving coordinate heads.
pub struct Nets {
    pub store: ParamStore,
    pub classifier: SpectralClassifier,
    pub ae: GeoAutoencoder,
    pub denoiser: Denoiser,
    pub egnn: Egnn,
    pub edge_builder: EdgeBuilder,
    pub spectrum: Vec<f64>,
    pub formula: Vec<usize>,
    pub labels: Vec<u8>,
}

impl Nets {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = small_encoder();
        let latent = small_latent();
        let classifier = SpectralClassifier::new(&mut store, 5, &enc, &mut rng);
        let vocab = AtomVocabulary::from_elements(&ELEMENTS);
        let ae = GeoAutoencoder::new(&mut store, vocab, enc.dim, &latent, &mut rng);
        let denoiser = Denoiser::new(&mut store, &latent, enc.dim, &small_denoiser(), &mut rng);
        let egnn = Egnn::new(
            &mut store,
            "probe.egnn",
            6,
            3,
            &EgnnConfig { layers: 3, hidden: 8 },
            &mut rng,
        );
        let edge_builder = EdgeBuilder::new(&mut store, "probe.edges", latent.atom_dim, latent.edge_dim, &mut rng);
        randomize_coord_heads(&mut store, &mut rng, 0.3);
        let spectrum = (0..enc.points).map(|_| rng.gen_range(0.0..1.0)).collect();
        let formula = vec![1, FORMULA_VOCAB - 9, 0, FORMULA_VOCAB - 8];
        let labels = (0..5).map(|_| rng.gen_range(0..2)).collect();
        Nets {
            store,
            classifier,
            ae,
            denoiser,
            egnn,
            edge_builder,
            spectrum,
            formula,
            labels,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EquivError {
    pub coord: f64,
    pub feature: f64,
}

impl EquivError {
    fn update(&mut self, coord: f64, feature: f64) {
        self.coord = self.coord.max(coord);
        self.feature = self.feature.max(feature);
    }

    pub fn passed(&self) -> bool {
        self.coord <= COORD_TOL && self.feature <= FEATURE_TOL
    }
}

/// `case` returns (invariant features, coordinates).
fn check_case(
    case: impl Fn(&mut Tape, &Tensor) -> Result<(Tensor, Tensor)>,
    x: &Tensor,
    centred_output: bool,
    rng: &mut ChaCha8Rng,
) -> Result<EquivError> {
    let mut err = EquivError::default();
    let (h0, x0) = case(&mut Tape::new(), x)?;
    for _ in 0..CASES {
        let r = random_rotation(rng);
        let t = random_translation(rng);
        let moved = transform(x, &r, t);
        // Latent-space networks only ever see zero-CoM input.
        let moved = if centred_output { moved.centered() } else { moved };
        let (h1, x1) = case(&mut Tape::new(), &moved)?;
        let expect = if centred_output {
            transform(&x0, &r, [0.0; 3])
        } else {
            transform(&x0, &r, t)
        };
        err.update(x1.max_abs_diff(&expect), h1.max_abs_diff(&h0));
    }
    Ok(err)
}

/// Rotation/translation checks of every geometric network.
pub fn equivariance_suite(seed: u64) -> Result<Vec<(&'static str, EquivError)>> {
    let nets = Nets::new(seed);
    let st = &nets.store;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE0);
    let n = ELEMENTS.len();
    let edges = EdgeIndex::complete(n);
    let x = Tensor::randn(&[n, 3], &mut rng).scale(1.2);
    let xc = x.centered();
    let h = Tensor::randn(&[n, 6], &mut rng);
    let attr = Tensor::randn(&[edges.len(), 3], &mut rng);
    let s_val = {
        let mut t = Tape::new();
        let s = nets
            .classifier
            .encoder
            .encode(&mut t, st, &nets.spectrum, &nets.formula)?;
        t.value(s).clone()
    };
    let cond = |t: &mut Tape| -> Result<(Var, Var, Var)> {
        let zh = nets.ae.embed_atoms(t, st, &ELEMENTS)?;
        let s = t.leaf(s_val.clone());
        let (c, _) = nets.ae.condition(t, st, zh, s)?;
        Ok((zh, s, c))
    };

    let mut out = Vec::new();
    let egnn = |t: &mut Tape, x: &Tensor| {
        let hv = t.leaf(h.clone());
        let xv = t.leaf(x.clone());
        let av = t.leaf(attr.clone());
        let (ho, xo) = nets.egnn.forward(t, st, hv, xv, &edges, Some(av))?;
        Ok((t.value(ho).clone(), t.value(xo).clone()))
    };
    out.push(("egnn", check_case(egnn, &x, false, &mut rng)?));

    let encoder = |t: &mut Tape, x: &Tensor| {
        let (_, _, c) = cond(t)?;
        let xv = t.leaf(x.clone());
        let e = nets.ae.encode(t, st, xv, c, &edges, None)?;
        Ok((t.value(c).clone(), t.value(e.mean).clone()))
    };
    out.push(("ae encoder", check_case(encoder, &xc, true, &mut rng)?));

    let decoder = |t: &mut Tape, z: &Tensor| {
        let (_, _, c) = cond(t)?;
        let zv = t.leaf(z.clone());
        let xo = nets.ae.decode(t, st, zv, c, &edges)?;
        Ok((t.value(c).clone(), t.value(xo).clone()))
    };
    out.push(("ae decoder", check_case(decoder, &xc, true, &mut rng)?));

    let edge_features = |t: &mut Tape, z: &Tensor| {
        let (zh, _, _) = cond(t)?;
        let zv = t.leaf(z.clone());
        let ze = nets.edge_builder.forward(t, st, zv, zh, &edges)?;
        Ok((t.value(ze).clone(), z.clone()))
    };
    out.push(("edge features", check_case(edge_features, &xc, true, &mut rng)?));

    for step in [1usize, 37, 100] {
        let den = |t: &mut Tape, z: &Tensor| {
            let (zh, s, _) = cond(t)?;
            let zv = t.leaf(z.clone());
            let o = nets.denoiser.forward(t, st, zv, step, zh, s, &edges)?;
            let maps: Vec<f64> = o
                .node_attention
                .iter()
                .chain(&o.edge_attention)
                .flat_map(|m| m.data().to_vec())
                .collect();
            Ok((Tensor::vector(maps), t.value(o.eps).clone()))
        };
        let name = match step {
            1 => "denoiser t=1",
            37 => "denoiser t=37",
            _ => "denoiser t=100",
        };
        out.push((name, check_case(den, &xc, true, &mut rng)?));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct GradResult {
    pub name: String,
    pub points: usize,
    pub worst: f64,
}

impl GradResult {
    pub fn passed(&self) -> bool {
        self.points >= GRAD_POINTS && self.worst < GRAD_TOL
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR)
}

/// Central differences on `coords` randomly chosen parameter entries per point.
fn param_check(
    name: &str,
    nets: &mut Nets,
    rng: &mut ChaCha8Rng,
    coords: usize,
    loss: &dyn Fn(&Nets, &mut Tape) -> Result<Var>,
) -> Result<GradResult> {
    const STEP: f64 = 1e-5;
    let ids: Vec<ParamId> = nets.store.ids().collect();
    let mut worst: f64 = 0.0;
    for _ in 0..GRAD_POINTS {
        // A fresh random point: jitter every parameter.
        for &id in &ids {
            let noise = Tensor::randn(nets.store.get(id).shape(), rng).scale(0.02);
            nets.store.get_mut(id).add_assign(&noise);
        }
        let mut tape = Tape::new();
        let l = loss(nets, &mut tape)?;
        let grads = tape.backward(l)?;
        for _ in 0..coords {
            let id = ids[rng.gen_range(0..ids.len())];
            let k = rng.gen_range(0..nets.store.get(id).len());
            let analytic = grads.param(id, &nets.store).data()[k];
            let orig = nets.store.get(id).data()[k];
            let mut eval = |v: f64| -> Result<f64> {
                nets.store.get_mut(id).data_mut()[k] = v;
                let mut t = Tape::new();
                let l = loss(nets, &mut t)?;
                Ok(t.value(l).item())
            };
            let numeric = (eval(orig + STEP)? - eval(orig - STEP)?) / (2.0 * STEP);
            nets.store.get_mut(id).data_mut()[k] = orig;
            worst = worst.max(rel(analytic, numeric));
        }
    }
    Ok(GradResult {
        name: name.into(),
        points: GRAD_POINTS,
        worst,
    })
}

/// Input-gradient check of one op over `GRAD_POINTS` random inputs.
fn op_check(
    name: &str,
    shape: &[usize],
    rng: &mut ChaCha8Rng,
    f: impl Fn(&mut Tape, Var) -> Result<Var>,
) -> Result<GradResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..GRAD_POINTS {
        let x = Tensor::randn(shape, rng);
        let r = grad_check(&f, &x, GRAD_TOL)?;
        worst = worst.max(r.max_rel_error);
    }
    Ok(GradResult {
        name: name.into(),
        points: GRAD_POINTS,
        worst,
    })
}

/// Weighted sum so every output entry reaches the scalar loss differently.
fn probe(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let w = Tensor::randn(&shape, &mut ChaCha8Rng::seed_from_u64(seed));
    let w = t.leaf(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

pub fn gradient_suite(seed: u64) -> Result<Vec<GradResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let other = Tensor::randn(&[4, 3], &mut rng);
    let mat = Tensor::randn(&[3, 5], &mut rng);
    let row = Tensor::randn(&[1, 3], &mut rng);
    let col = Tensor::randn(&[4, 1], &mut rng);
    let idx = std::rc::Rc::new(vec![0usize, 2, 2, 3, 1]);
    macro_rules! op {
        ($name:expr, $shape:expr, |$t:ident, $x:ident| $body:expr) => {{
            let s = out.len() as u64;
            out.push(op_check($name, &$shape, &mut rng, |$t: &mut Tape, $x: Var| {
                let y = $body;
                probe($t, y, s)
            })?);
        }};
    }
    op!("matmul", [4, 3], |t, x| {
        let m = t.leaf(mat.clone());
        t.matmul(x, m)?
    });
    op!("matmul_nt", [4, 3], |t, x| {
        let o = t.leaf(other.clone());
        t.matmul_nt(x, o)?
    });
    op!("add_bias", [4, 3], |t, x| {
        let b = t.leaf(row.clone());
        t.add_bias(x, b)?
    });
    op!("add", [4, 3], |t, x| {
        let o = t.leaf(other.clone());
        t.add(x, o)?
    });
    op!("sub", [4, 3], |t, x| {
        let o = t.leaf(other.clone());
        t.sub(o, x)?
    });
    op!("mul", [4, 3], |t, x| {
        let o = t.leaf(other.clone());
        t.mul(x, o)?
    });
    op!("div", [4, 3], |t, x| {
        let d = t.square(x);
        let d = t.add_scalar(d, 0.5);
        let o = t.leaf(other.clone());
        t.div(o, d)?
    });
    op!("scale", [4, 3], |t, x| t.scale(x, -1.7));
    op!("add_scalar", [4, 3], |t, x| t.add_scalar(x, 0.3));
    op!("silu", [4, 3], |t, x| t.silu(x));
    op!("sigmoid", [4, 3], |t, x| t.sigmoid(x));
    op!("sqrt", [4, 3], |t, x| {
        let s = t.square(x);
        let s = t.add_scalar(s, 0.1);
        t.sqrt(s)
    });
    op!("square", [4, 3], |t, x| t.square(x));
    op!("softmax", [4, 3], |t, x| t.softmax(x));
    op!("layer_norm", [4, 3], |t, x| t.layer_norm(x, 1e-5));
    op!("mul_row", [4, 3], |t, x| {
        let r = t.leaf(row.clone());
        t.mul_row(x, r)?
    });
    op!("mul_col", [4, 3], |t, x| {
        let c = t.leaf(col.clone());
        t.mul_col(x, c)?
    });
    op!("mul_col (scalar side)", [4, 1], |t, x| {
        let o = t.leaf(other.clone());
        t.mul_col(o, x)?
    });
    op!("concat_cols", [4, 3], |t, x| {
        let o = t.leaf(other.clone());
        t.concat_cols(&[x, o, x])?
    });
    op!("concat_rows", [4, 3], |t, x| {
        let o = t.leaf(other.clone());
        t.concat_rows(&[o, x])?
    });
    op!("slice_cols", [4, 3], |t, x| t.slice_cols(x, 1, 2)?);
    op!("slice_rows", [4, 3], |t, x| t.slice_rows(x, 1, 2)?);
    op!("transpose", [4, 3], |t, x| t.transpose(x));
    op!("gather_rows", [4, 3], |t, x| t.gather_rows(x, idx.clone())?);
    op!("scatter_add_rows", [5, 3], |t, x| t.scatter_add_rows(
        x,
        idx.clone(),
        4
    )?);
    op!("sum", [4, 3], |t, x| t.sum(x));
    op!("mean", [4, 3], |t, x| t.mean(x));
    op!("row_sum", [4, 3], |t, x| t.row_sum(x));
    op!("center", [4, 3], |t, x| t.center(x));
    op!("bce_with_logits", [1, 6], |t, x| t
        .bce_with_logits(x, &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0])?);

    // Composite objectives, differentiated with respect to parameters.
    let mut nets = Nets::new(seed ^ 0xC0);
    let n = ELEMENTS.len();
    let edges = EdgeIndex::complete(n);
    let x = Tensor::randn(&[n, 3], &mut rng).centered();
    let ae_noise = centered_noise(n, &mut rng);
    let schedule = make_schedule(50, ScheduleKind::Polynomial)?;

    out.push(param_check("classifier loss", &mut nets, &mut rng, 6, &|m, t| {
        let (_, l) = m.classifier.loss(t, &m.store, &m.spectrum, &m.formula, &m.labels)?;
        Ok(l)
    })?);
    out.push(param_check("autoencoder loss", &mut nets, &mut rng, 6, &|m, t| {
        let s = m.classifier.encoder.encode(t, &m.store, &m.spectrum, &m.formula)?;
        let zh = m.ae.embed_atoms(t, &m.store, &ELEMENTS)?;
        let (c, _) = m.ae.condition(t, &m.store, zh, s)?;
        let xv = t.leaf(x.clone());
        let (l, _) = m.ae.loss(t, &m.store, xv, c, &edges, Some(&ae_noise))?;
        Ok(l.total)
    })?);
    let ldm_seed: u64 = rng.gen();
    out.push(param_check(
        "latent diffusion loss",
        &mut nets,
        &mut rng,
        6,
        &|m, t| {
            let s = m.classifier.encoder.encode(t, &m.store, &m.spectrum, &m.formula)?;
            let zh = m.ae.embed_atoms(t, &m.store, &ELEMENTS)?;
            // Same t and noise on every evaluation.
            let mut r = ChaCha8Rng::seed_from_u64(ldm_seed);
            ldm_loss(t, &m.store, &m.denoiser, &schedule, &x, zh, s, &edges, &mut r)
        },
    )?);
    Ok(out)
}
