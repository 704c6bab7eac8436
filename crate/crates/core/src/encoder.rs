//! Spectral transformer: patch and formula-token embedding, a pre-norm
//! encoder, and a functional-group query decoder producing one logit per
//! group.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::chem::Element;
use crate::error::{Error, Result};
use crate::nn::{Attention, Embedding, LayerNorm, Linear, Mlp};
use crate::params::{ParamId, ParamStore};
use crate::spectra::Spectrum;
use crate::tensor::Tensor;

/// Digits come after the element symbols.
pub const DIGIT_BASE: usize = Element::ALL.len();
pub const FORMULA_VOCAB: usize = DIGIT_BASE + 10;

/// Splits a Hill formula into element and single-digit tokens:
/// `C3H8O` → `C, 3, H, 8, O`.
pub fn formula_tokens(formula: &str) -> Result<Vec<usize>> {
    let chars: Vec<char> = formula.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if let Some(d) = c.to_digit(10) {
            out.push(DIGIT_BASE + d as usize);
            i += 1;
        } else if c.is_ascii_uppercase() {
            let mut sym = c.to_string();
            if i + 1 < chars.len() && chars[i + 1].is_ascii_lowercase() {
                sym.push(chars[i + 1]);
            }
            i += sym.len();
            let e: Element = sym
                .parse()
                .map_err(|_| Error::Vocabulary(format!("formula token `{sym}` in `{formula}`")))?;
            let k = Element::ALL.iter().position(|x| *x == e).expect("element in ALL");
            out.push(k);
        } else {
            return Err(Error::Vocabulary(format!("formula character `{c}` in `{formula}`")));
        }
    }
    Ok(out)
}

/// Network input for a spectrum: intensities divided by their maximum, so a
/// zero spectrum stays zero.
pub fn spectrum_input(s: &Spectrum) -> Vec<f64> {
    let max = s.intensities.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        s.intensities.iter().map(|v| v / max).collect()
    } else {
        s.intensities.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub points: usize,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
    pub max_formula_tokens: usize,
    pub decoder_layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            points: 3200,
            patch: 64,
            dim: 64,
            heads: 4,
            layers: 2,
            ff: 128,
            max_formula_tokens: 16,
            decoder_layers: 1,
        }
    }
}

impl EncoderConfig {
    /// Four layers, eight heads, width 512.
    pub fn full_scale() -> Self {
        EncoderConfig {
            dim: 512,
            heads: 8,
            layers: 4,
            ff: 2048,
            ..EncoderConfig::default()
        }
    }

    pub fn patches(&self) -> usize {
        self.points / self.patch
    }
}

#[derive(Clone, Debug)]
struct Block {
    ln_attn: LayerNorm,
    attn: Attention,
    ln_ff: LayerNorm,
    ff: Mlp,
}

impl Block {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c: &EncoderConfig, rng: &mut R) -> Self {
        Block {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln1"), c.dim),
            attn: Attention::new(store, &format!("{name}.attn"), c.dim, c.dim, c.heads, rng),
            ln_ff: LayerNorm::new(store, &format!("{name}.ln2"), c.dim),
            ff: Mlp::new(store, &format!("{name}.ff"), &[c.dim, c.ff, c.dim], false, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = self.ln_attn.forward(tape, store, x)?;
        let (a, _) = self.attn.forward(tape, store, n, n)?;
        let x = tape.add(x, a)?;
        let n = self.ln_ff.forward(tape, store, x)?;
        let f = self.ff.forward(tape, store, n)?;
        tape.add(x, f)
    }
}

/// Patch embedding plus transformer encoder producing `S`.
#[derive(Clone, Debug)]
pub struct SpectralEncoder {
    pub config: EncoderConfig,
    patch: Linear,
    tokens: Embedding,
    position: ParamId,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
}

impl SpectralEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: &EncoderConfig, rng: &mut R) -> Self {
        let rows = config.patches() + config.max_formula_tokens;
        SpectralEncoder {
            config: config.clone(),
            patch: Linear::new(store, &format!("{name}.patch"), config.patch, config.dim, rng),
            tokens: Embedding::new(store, &format!("{name}.formula"), FORMULA_VOCAB, config.dim, rng),
            position: store.insert(
                format!("{name}.position"),
                Tensor::randn(&[rows, config.dim], rng).scale(0.02),
            ),
            blocks: (0..config.layers)
                .map(|l| Block::new(store, &format!("{name}.block{l}"), config, rng))
                .collect(),
            ln_out: LayerNorm::new(store, &format!("{name}.ln_out"), config.dim),
        }
    }

    /// Token sequence of `p + c` rows: projected patches, then formula token
    /// embeddings, plus learned positions.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, spectrum: &[f64], formula: &[usize]) -> Result<Var> {
        let c = &self.config;
        if spectrum.len() != c.points {
            return Err(Error::GridMismatch(format!(
                "encoder expects {} points, got {}",
                c.points,
                spectrum.len()
            )));
        }
        if formula.len() > c.max_formula_tokens {
            return Err(Error::Vocabulary(format!(
                "{} formula tokens, at most {} supported",
                formula.len(),
                c.max_formula_tokens
            )));
        }
        let patches = tape.leaf(Tensor::matrix(c.patches(), c.patch, spectrum.to_vec())?);
        let p = self.patch.forward(tape, store, patches)?;
        let seq = if formula.is_empty() {
            p
        } else {
            let f = self.tokens.forward(tape, store, formula)?;
            tape.concat_rows(&[p, f])?
        };
        let pos = tape.param(store, self.position);
        let pos = tape.slice_rows(pos, 0, c.patches() + formula.len())?;
        tape.add(seq, pos)
    }

    /// `S`: `(p + c) × d` spectral features.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, spectrum: &[f64], formula: &[usize]) -> Result<Var> {
        let mut x = self.embed(tape, store, spectrum, formula)?;
        for b in &self.blocks {
            x = b.forward(tape, store, x)?;
        }
        self.ln_out.forward(tape, store, x)
    }
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    ln_self: LayerNorm,
    self_attn: Attention,
    ln_cross: LayerNorm,
    cross: Attention,
    ln_ff: LayerNorm,
    ff: Mlp,
}

/// Learnable group queries attending to `S`; a shared head maps each query
/// to its logit.
#[derive(Clone, Debug)]
pub struct FgDecoder {
    pub groups: usize,
    queries: ParamId,
    blocks: Vec<DecoderBlock>,
    ln_out: LayerNorm,
    pub head: Linear,
}

/// Logits with the cross-attention maps of every decoder layer (each
/// `groups × (p + c)`, averaged over heads).
pub struct FgOutput {
    pub logits: Var,
    pub attention: Vec<Tensor>,
}

impl FgDecoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        groups: usize,
        config: &EncoderConfig,
        rng: &mut R,
    ) -> Self {
        let d = config.dim;
        let blocks = (0..config.decoder_layers)
            .map(|l| {
                let n = format!("{name}.block{l}");
                DecoderBlock {
                    ln_self: LayerNorm::new(store, &format!("{n}.ln1"), d),
                    self_attn: Attention::new(store, &format!("{n}.self"), d, d, config.heads, rng),
                    ln_cross: LayerNorm::new(store, &format!("{n}.ln2"), d),
                    cross: Attention::new(store, &format!("{n}.cross"), d, d, config.heads, rng),
                    ln_ff: LayerNorm::new(store, &format!("{n}.ln3"), d),
                    ff: Mlp::new(store, &format!("{n}.ff"), &[d, config.ff, d], false, rng),
                }
            })
            .collect();
        FgDecoder {
            groups,
            queries: store.insert(format!("{name}.queries"), Tensor::randn(&[groups, d], rng).scale(0.5)),
            blocks,
            ln_out: LayerNorm::new(store, &format!("{name}.ln_out"), d),
            head: Linear::new(store, &format!("{name}.head"), d, 1, rng),
        }
    }

    pub fn queries_id(&self) -> ParamId {
        self.queries
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, s: Var) -> Result<FgOutput> {
        let q = tape.param(store, self.queries);
        self.forward_queries(tape, store, q, s)
    }

    /// Decoder on explicit query rows.
    pub fn forward_queries(&self, tape: &mut Tape, store: &ParamStore, mut q: Var, s: Var) -> Result<FgOutput> {
        let mut attention = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let n = b.ln_self.forward(tape, store, q)?;
            let (a, _) = b.self_attn.forward(tape, store, n, n)?;
            q = tape.add(q, a)?;
            let n = b.ln_cross.forward(tape, store, q)?;
            let (a, maps) = b.cross.forward(tape, store, n, s)?;
            attention.push(crate::nn::mean_attention(tape, &maps));
            q = tape.add(q, a)?;
            let n = b.ln_ff.forward(tape, store, q)?;
            let f = b.ff.forward(tape, store, n)?;
            q = tape.add(q, f)?;
        }
        let n = self.ln_out.forward(tape, store, q)?;
        let logits = self.head.forward(tape, store, n)?;
        Ok(FgOutput { logits, attention })
    }
}

/// Encoder plus group decoder.
#[derive(Clone, Debug)]
pub struct SpectralClassifier {
    pub encoder: SpectralEncoder,
    pub decoder: FgDecoder,
}

/// Parameter-name prefix of the classifier.
pub const CLASSIFIER_PREFIX: &str = "cls";

impl SpectralClassifier {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, groups: usize, config: &EncoderConfig, rng: &mut R) -> Self {
        SpectralClassifier {
            encoder: SpectralEncoder::new(store, &format!("{CLASSIFIER_PREFIX}.enc"), config, rng),
            decoder: FgDecoder::new(store, &format!("{CLASSIFIER_PREFIX}.dec"), groups, config, rng),
        }
    }

    /// Returns `S` and the decoder output.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        spectrum: &[f64],
        formula: &[usize],
    ) -> Result<(Var, FgOutput)> {
        let s = self.encoder.encode(tape, store, spectrum, formula)?;
        let out = self.decoder.forward(tape, store, s)?;
        Ok((s, out))
    }

    /// Mean BCE of the group logits against 0/1 labels.
    pub fn loss(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        spectrum: &[f64],
        formula: &[usize],
        labels: &[u8],
    ) -> Result<(Var, Var)> {
        let (s, out) = self.forward(tape, store, spectrum, formula)?;
        let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        Ok((s, tape.bce_with_logits(out.logits, &y)?))
    }
}
