//! Geometric autoencoder: atom-type embedding, cross-attention from atoms and
//! atom pairs to the spectral features, and equivariant encoding/decoding of
//! coordinates to the per-atom latent `z_x`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::chem::Element;
use crate::egnn::{EdgeIndex, Egnn, EgnnConfig};
use crate::error::{Error, Result};
use crate::nn::{mean_attention, Attention, Embedding, LayerNorm, Mlp};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Ordered atom types seen in training; the position is the token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomVocabulary {
    pub elements: Vec<Element>,
}

impl AtomVocabulary {
    /// Sorted by atomic number, duplicates removed.
    pub fn from_elements<'a>(elements: impl IntoIterator<Item = &'a Element>) -> Self {
        let mut v: Vec<Element> = elements.into_iter().copied().collect();
        v.sort_by_key(|e| e.atomic_number());
        v.dedup();
        AtomVocabulary { elements: v }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn token(&self, e: Element) -> Result<usize> {
        self.elements
            .iter()
            .position(|x| *x == e)
            .ok_or_else(|| Error::Vocabulary(format!("atom type {} not in vocabulary", e.symbol())))
    }

    pub fn tokens(&self, elements: &[Element]) -> Result<Vec<usize>> {
        elements.iter().map(|e| self.token(*e)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentConfig {
    /// Width of `z_h`.
    pub atom_dim: usize,
    /// Width of `z_e`.
    pub edge_dim: usize,
    pub heads: usize,
    /// Cross-attention layers for node and for edge injection.
    pub inject_layers: usize,
    pub encoder: EgnnConfig,
    pub decoder: EgnnConfig,
    /// Encoder standard deviation σ₀.
    pub sigma: f64,
    pub kl_weight: f64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        LatentConfig {
            atom_dim: 16,
            edge_dim: 16,
            heads: 4,
            inject_layers: 4,
            encoder: EgnnConfig { layers: 1, hidden: 64 },
            decoder: EgnnConfig { layers: 4, hidden: 64 },
            sigma: 0.01,
            kl_weight: 1e-4,
        }
    }
}

/// Residual cross-attention stack from query rows to the spectral features.
#[derive(Clone, Debug)]
pub struct CrossAttentionStack {
    layers: Vec<(LayerNorm, Attention)>,
}

impl CrossAttentionStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        context_dim: usize,
        heads: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        CrossAttentionStack {
            layers: (0..layers)
                .map(|l| {
                    (
                        LayerNorm::new(store, &format!("{name}.{l}.ln"), dim),
                        Attention::new(store, &format!("{name}.{l}.attn"), dim, context_dim, heads, rng),
                    )
                })
                .collect(),
        }
    }

    /// Returns the updated rows and each layer's head-averaged attention
    /// (`rows × context rows`).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut q: Var, s: Var) -> Result<(Var, Vec<Tensor>)> {
        let mut maps = Vec::with_capacity(self.layers.len());
        for (ln, attn) in &self.layers {
            let n = ln.forward(tape, store, q)?;
            let (a, heads) = attn.forward(tape, store, n, s)?;
            maps.push(mean_attention(tape, &heads));
            q = tape.add(q, a)?;
        }
        Ok((q, maps))
    }
}

/// `concat(z_h, z_hs)` where `z_hs` is `z_h` after cross-attention to `S`.
#[derive(Clone, Debug)]
pub struct NodeInjector {
    pub stack: CrossAttentionStack,
}

impl NodeInjector {
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z_h: Var, s: Var) -> Result<(Var, Vec<Tensor>)> {
        let (zs, maps) = self.stack.forward(tape, store, z_h, s)?;
        Ok((tape.concat_cols(&[z_h, zs])?, maps))
    }
}

/// `z_e_ij = MLP(‖z_x_i − z_x_j‖², z_h_i + z_h_j)` over the ordered pairs of
/// `edges`.
#[derive(Clone, Debug)]
pub struct EdgeBuilder {
    pub mlp: Mlp,
}

impl EdgeBuilder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        atom_dim: usize,
        edge_dim: usize,
        rng: &mut R,
    ) -> Self {
        EdgeBuilder {
            mlp: Mlp::new(store, name, &[1 + atom_dim, edge_dim, edge_dim], false, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z_x: Var, z_h: Var, edges: &EdgeIndex) -> Result<Var> {
        let xi = tape.gather_rows(z_x, edges.src.clone())?;
        let xj = tape.gather_rows(z_x, edges.dst.clone())?;
        let diff = tape.sub(xi, xj)?;
        let sq = tape.square(diff);
        let d2 = tape.row_sum(sq);
        let hi = tape.gather_rows(z_h, edges.src.clone())?;
        let hj = tape.gather_rows(z_h, edges.dst.clone())?;
        let hsum = tape.add(hi, hj)?;
        let input = tape.concat_cols(&[d2, hsum])?;
        self.mlp.forward(tape, store, input)
    }
}

/// Closed-form KL of `N(μ, σ²I)` against `N(0, I)`, summed over entries.
pub fn gaussian_kl(mu: &Tensor, sigma: f64) -> f64 {
    let per = sigma * sigma - 1.0 - 2.0 * sigma.ln();
    0.5 * mu.data().iter().map(|m| m * m + per).sum::<f64>()
}

/// Terms of the autoencoder objective.
#[derive(Clone, Copy, Debug)]
pub struct AeLoss {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

/// `Σ‖x − x̃‖² + λ·KL(N(μ, σ²) ‖ N(0, I))`.
pub fn ae_loss(tape: &mut Tape, x: Var, x_tilde: Var, mu: Var, sigma: f64, kl_weight: f64) -> Result<AeLoss> {
    let d = tape.sub(x, x_tilde)?;
    let d = tape.square(d);
    let recon = tape.sum(d);
    let m2 = tape.square(mu);
    let m2 = tape.sum(m2);
    let m2 = tape.scale(m2, 0.5);
    let entries = tape.value(mu).len() as f64;
    let kl = tape.add_scalar(m2, 0.5 * entries * (sigma * sigma - 1.0 - 2.0 * sigma.ln()));
    let weighted = tape.scale(kl, kl_weight);
    let total = tape.add(recon, weighted)?;
    Ok(AeLoss { total, recon, kl })
}

/// Parameter-name prefix of the autoencoder.
pub const AE_PREFIX: &str = "ae";

#[derive(Clone, Debug)]
pub struct GeoAutoencoder {
    pub config: LatentConfig,
    pub vocab: AtomVocabulary,
    pub atoms: Embedding,
    pub inject: NodeInjector,
    pub encoder: Egnn,
    pub decoder: Egnn,
}

/// Encoder output for one geometry.
pub struct Encoded {
    /// Mean of the encoder Gaussian, zero-CoM.
    pub mean: Var,
    /// Mean plus σ₀ noise (re-centred) when sampling, else the mean.
    pub z_x: Var,
}

impl GeoAutoencoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab: AtomVocabulary,
        spectral_dim: usize,
        config: &LatentConfig,
        rng: &mut R,
    ) -> Self {
        let d = config.atom_dim;
        GeoAutoencoder {
            atoms: Embedding::new(store, &format!("{AE_PREFIX}.atoms"), vocab.len(), d, rng),
            inject: NodeInjector {
                stack: CrossAttentionStack::new(
                    store,
                    &format!("{AE_PREFIX}.inject"),
                    d,
                    spectral_dim,
                    config.heads,
                    config.inject_layers,
                    rng,
                ),
            },
            encoder: Egnn::new(store, &format!("{AE_PREFIX}.enc"), 2 * d, 0, &config.encoder, rng),
            decoder: Egnn::new(store, &format!("{AE_PREFIX}.dec"), 2 * d, 0, &config.decoder, rng),
            vocab,
            config: config.clone(),
        }
    }

    /// `z_h` rows for the given atom types.
    pub fn embed_atoms(&self, tape: &mut Tape, store: &ParamStore, elements: &[Element]) -> Result<Var> {
        let tokens = self.vocab.tokens(elements)?;
        self.atoms.forward(tape, store, &tokens)
    }

    /// Augmented node features `concat(z_h, z_hs)`.
    pub fn condition(&self, tape: &mut Tape, store: &ParamStore, z_h: Var, s: Var) -> Result<(Var, Vec<Tensor>)> {
        self.inject.forward(tape, store, z_h, s)
    }

    /// Encodes centred coordinates `x`. With `noise`, adds `σ₀·noise` to the
    /// mean and re-projects.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        cond: Var,
        edges: &EdgeIndex,
        noise: Option<&Tensor>,
    ) -> Result<Encoded> {
        let (_, out) = self.encoder.forward(tape, store, cond, x, edges, None)?;
        let mean = tape.center(out);
        let z_x = match noise {
            Some(eps) => {
                let e = tape.leaf(eps.scale(self.config.sigma));
                let z = tape.add(mean, e)?;
                tape.center(z)
            }
            None => mean,
        };
        Ok(Encoded { mean, z_x })
    }

    /// Reconstructed zero-CoM coordinates.
    pub fn decode(&self, tape: &mut Tape, store: &ParamStore, z_x: Var, cond: Var, edges: &EdgeIndex) -> Result<Var> {
        let (_, out) = self.decoder.forward(tape, store, cond, z_x, edges, None)?;
        Ok(tape.center(out))
    }

    /// Full autoencoder pass on centred coordinates `x`.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        cond: Var,
        edges: &EdgeIndex,
        noise: Option<&Tensor>,
    ) -> Result<(AeLoss, Encoded)> {
        let enc = self.encode(tape, store, x, cond, edges, noise)?;
        let x_tilde = self.decode(tape, store, enc.z_x, cond, edges)?;
        let loss = ae_loss(tape, x, x_tilde, enc.mean, self.config.sigma, self.config.kl_weight)?;
        Ok((loss, enc))
    }
}
