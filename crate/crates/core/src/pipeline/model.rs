//! The three networks in one parameter store, plus checkpoint metadata.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint;
use crate::chem::Element;
use crate::diffusion::{make_schedule, Denoiser, NoiseSchedule};
use crate::egnn::EdgeIndex;
use crate::encoder::{formula_tokens, spectrum_input, SpectralClassifier};
use crate::error::{Error, Result};
use crate::latent::{AtomVocabulary, GeoAutoencoder};
use crate::params::ParamStore;
use crate::pipeline::config::RunConfig;
use crate::pipeline::store::Entry;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Classifier,
    Ae,
    Ldm,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Classifier => "classifier",
            Stage::Ae => "ae",
            Stage::Ldm => "ldm",
        }
    }
}

/// Stored next to the tensors of every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub config: RunConfig,
    pub vocab: AtomVocabulary,
    pub groups: usize,
}

pub struct Model {
    pub config: RunConfig,
    pub vocab: AtomVocabulary,
    pub groups: usize,
    pub params: ParamStore,
    pub classifier: SpectralClassifier,
    pub ae: GeoAutoencoder,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
}

/// Per-molecule network inputs that do not change during training.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub spectrum: Vec<f64>,
    pub formula: Vec<usize>,
    pub elements: Vec<Element>,
    /// Centred coordinates.
    pub coords: Tensor,
    pub labels: Vec<u8>,
}

impl Prepared {
    pub fn new(entry: &Entry) -> Result<Self> {
        let g = &entry.geometry;
        let coords = Tensor::new(vec![g.len(), 3], g.coords.iter().flatten().copied().collect())?.centered();
        Ok(Prepared {
            spectrum: spectrum_input(&entry.spectrum),
            formula: formula_tokens(&entry.record.formula)?,
            elements: g.elements.clone(),
            coords,
            labels: entry.record.labels.clone(),
        })
    }

    pub fn edges(&self) -> EdgeIndex {
        EdgeIndex::complete(self.elements.len())
    }
}

impl Model {
    /// Fresh parameters drawn from `config.seed`; construction order is
    /// fixed, so the same config always yields the same store layout.
    pub fn new(config: &RunConfig, vocab: AtomVocabulary, groups: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let classifier = SpectralClassifier::new(&mut params, groups, &config.encoder, &mut rng);
        let sd = config.encoder.dim;
        let ae = GeoAutoencoder::new(&mut params, vocab.clone(), sd, &config.latent, &mut rng);
        let denoiser = Denoiser::new(&mut params, &config.latent, sd, &config.denoiser, &mut rng);
        let schedule = make_schedule(config.diffusion.steps, config.diffusion.schedule)?;
        Ok(Model {
            config: config.clone(),
            vocab,
            groups,
            params,
            classifier,
            ae,
            denoiser,
            schedule,
        })
    }

    pub fn meta(&self, stage: Stage) -> CheckpointMeta {
        CheckpointMeta {
            stage,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            groups: self.groups,
        }
    }

    pub fn save(&self, path: &Path, stage: Stage) -> Result<()> {
        checkpoint::save(path, &self.params, &serde_json::to_value(self.meta(stage))?)
    }

    /// Rebuilds the model a checkpoint was written from.
    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let (params, meta) = checkpoint::load(path)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)
            .map_err(|e| Error::Checkpoint(format!("{}: bad metadata: {e}", path.display())))?;
        let mut model = Model::new(&meta.config, meta.vocab.clone(), meta.groups)?;
        let copied = model.params.copy_from(&params, "")?;
        if copied != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {copied} of {} tensors present",
                path.display(),
                model.params.len()
            )));
        }
        Ok((model, meta))
    }

    /// Spectral features `S` on `tape`.
    pub fn spectral_features(&self, tape: &mut Tape, p: &Prepared) -> Result<Var> {
        self.classifier
            .encoder
            .encode(tape, &self.params, &p.spectrum, &p.formula)
    }

    /// `S` as a plain tensor.
    pub fn spectral_tensor(&self, p: &Prepared) -> Result<Tensor> {
        let mut t = Tape::new();
        let s = self.spectral_features(&mut t, p)?;
        Ok(t.value(s).clone())
    }

    /// Group logits for one molecule.
    pub fn predict_groups(&self, p: &Prepared) -> Result<Vec<f64>> {
        let mut t = Tape::new();
        let (_, out) = self.classifier.forward(&mut t, &self.params, &p.spectrum, &p.formula)?;
        Ok(t.value(out.logits).data().to_vec())
    }
}
