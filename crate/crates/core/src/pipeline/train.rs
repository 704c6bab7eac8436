//! Staged training: classifier pretraining, joint autoencoder plus
//! classifier, then latent diffusion with the classifier frozen.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Var};
use crate::diffusion::DENOISER_PREFIX;
use crate::diffusion::{centered_noise, ldm_loss};
use crate::encoder::CLASSIFIER_PREFIX;
use crate::error::{Error, Result};
use crate::latent::{AtomVocabulary, AE_PREFIX};
use crate::optim::AdamW;
use crate::pipeline::config::RunConfig;
use crate::pipeline::model::{Model, Prepared, Stage};
use crate::pipeline::store::{hex, DatasetStore};
use crate::smarts::FunctionalGroupSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_FILE: &str = "checkpoint.s2g";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "loss.csv";

/// `base · 512^{−1/2} · min(step^{−1/2}, step · warmup^{−3/2})`; step 0 is
/// treated as step 1.
pub fn lr_rate(step: u64, warmup: u64, base: f64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    base * 512f64.powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

/// One row per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub metrics: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to re-run a stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub config: RunConfig,
    pub store_hash: String,
    pub parent: Option<FileHash>,
    pub checkpoint: FileHash,
    pub steps: u64,
}

pub struct TrainReport {
    pub stage: Stage,
    pub log: Vec<LogRow>,
    pub manifest: StageManifest,
    pub model: Model,
}

impl TrainReport {
    pub fn last_metric(&self, name: &str) -> Option<f64> {
        self.log
            .last()
            .and_then(|r| r.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Metric columns come from the last row; epochs without an evaluation
/// leave them blank.
fn log_csv(rows: &[LogRow]) -> String {
    let names: Vec<&str> = rows
        .last()
        .map(|r| r.metrics.iter().map(|(n, _)| n.as_str()).collect())
        .unwrap_or_default();
    let mut s = String::from("epoch,step,lr,loss");
    for n in &names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{:e},{}", r.epoch, r.step, r.lr, r.loss));
        for n in &names {
            s.push(',');
            if let Some((_, v)) = r.metrics.iter().find(|(m, _)| m == n) {
                s.push_str(&v.to_string());
            }
        }
        s.push('\n');
    }
    s
}

/// Label accuracy over all molecules and groups, and the accuracy of each
/// group, thresholding logits at zero.
pub fn classifier_accuracy(model: &Model, data: &[Prepared]) -> Result<(f64, Vec<f64>)> {
    let mut correct = vec![0usize; model.groups];
    for p in data {
        let logits = model.predict_groups(p)?;
        for (k, (z, y)) in logits.iter().zip(&p.labels).enumerate() {
            if (*z > 0.0) == (*y == 1) {
                correct[k] += 1;
            }
        }
    }
    let n = data.len().max(1) as f64;
    let per: Vec<f64> = correct.iter().map(|c| *c as f64 / n).collect();
    let overall = per.iter().sum::<f64>() / per.len().max(1) as f64;
    Ok((overall, per))
}

/// Mean squared atom displacement `(1/N)·Σ‖x − x̃‖²` of the deterministic
/// encode/decode round trip, per molecule.
pub fn reconstruction_mse(model: &Model, data: &[Prepared]) -> Result<Vec<f64>> {
    data.iter()
        .map(|p| {
            let mut t = Tape::new();
            let s = model.spectral_features(&mut t, p)?;
            let zh = model.ae.embed_atoms(&mut t, &model.params, &p.elements)?;
            let (cond, _) = model.ae.condition(&mut t, &model.params, zh, s)?;
            let x = t.leaf(p.coords.clone());
            let edges = p.edges();
            let enc = model.ae.encode(&mut t, &model.params, x, cond, &edges, None)?;
            let xt = model.ae.decode(&mut t, &model.params, enc.z_x, cond, &edges)?;
            let sq: f64 = t
                .value(xt)
                .data()
                .iter()
                .zip(p.coords.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            Ok(sq / p.elements.len() as f64)
        })
        .collect()
}

fn prepare(store: &DatasetStore) -> Result<Vec<Prepared>> {
    store.entries.iter().map(Prepared::new).collect()
}

fn stage_seed(seed: u64, stage: Stage) -> u64 {
    seed ^ (0x5851_F42D_4C95_7F2D_u64.wrapping_mul(stage as u64 + 1))
}

/// Checks the parts of `config` that fix parameter shapes against the
/// checkpoint's.
fn same_architecture(a: &RunConfig, b: &RunConfig) -> Result<()> {
    if a.encoder != b.encoder || a.latent != b.latent || a.denoiser != b.denoiser || a.seed != b.seed {
        return Err(Error::Config(
            "model sections or seed differ from the prerequisite checkpoint's config".into(),
        ));
    }
    Ok(())
}

fn load_parent(stage: Stage, parent: Option<&Path>, config: &RunConfig) -> Result<(Model, FileHash)> {
    let need = match stage {
        Stage::Classifier => unreachable!("classifier stage has no prerequisite"),
        Stage::Ae => Stage::Classifier,
        Stage::Ldm => Stage::Ae,
    };
    let path = parent
        .ok_or_else(|| Error::Prerequisite(format!("{} stage needs a {} checkpoint", stage.name(), need.name())))?;
    if !path.exists() {
        return Err(Error::Prerequisite(format!(
            "{} stage needs a {} checkpoint; {} does not exist",
            stage.name(),
            need.name(),
            path.display()
        )));
    }
    let (mut model, meta) = Model::load(path)?;
    if meta.stage < need {
        return Err(Error::Prerequisite(format!(
            "{} stage needs a {} checkpoint, {} holds a {} checkpoint",
            stage.name(),
            need.name(),
            path.display(),
            meta.stage.name()
        )));
    }
    same_architecture(config, &meta.config)?;
    model.config = config.clone();
    model.schedule = crate::diffusion::make_schedule(config.diffusion.steps, config.diffusion.schedule)?;
    let hash = FileHash {
        path: path.to_path_buf(),
        sha256: file_sha256(path)?,
    };
    Ok((model, hash))
}

/// Trains `stage` on `store`, writing checkpoint, loss log and manifest
/// into `out`. Later stages start from the checkpoint at `parent`.
pub fn train(
    stage: Stage,
    store: &DatasetStore,
    config: &RunConfig,
    parent: Option<&Path>,
    out: &Path,
) -> Result<TrainReport> {
    if store.is_empty() {
        return Err(Error::Usage("cannot train on an empty store".into()));
    }
    let data = prepare(store)?;
    let (mut model, parent_hash) = match stage {
        Stage::Classifier => {
            let vocab = AtomVocabulary::from_elements(data.iter().flat_map(|p| p.elements.iter()));
            let groups = FunctionalGroupSet::default().len();
            (Model::new(config, vocab, groups)?, None)
        }
        _ => {
            let (m, h) = load_parent(stage, parent, config)?;
            (m, Some(h))
        }
    };
    for p in &data {
        model.ae.vocab.tokens(&p.elements)?;
        if p.labels.len() != model.groups {
            return Err(Error::dim(format!(
                "{} labels, model has {} groups",
                p.labels.len(),
                model.groups
            )));
        }
    }

    let tc = &config.train;
    let epochs = match stage {
        Stage::Classifier => tc.classifier_epochs,
        Stage::Ae => tc.ae_epochs,
        Stage::Ldm => tc.ldm_epochs,
    };
    let trainable = move |name: &str| -> bool {
        let cls = name.starts_with(CLASSIFIER_PREFIX);
        let ae = name.starts_with(AE_PREFIX);
        let ldm = name.starts_with(DENOISER_PREFIX);
        match stage {
            Stage::Classifier => cls,
            Stage::Ae => cls || ae,
            Stage::Ldm => ae || ldm,
        }
    };
    // The classifier is frozen during the diffusion stage, so its features
    // can be computed once.
    let frozen_s: Vec<Option<Tensor>> = match stage {
        Stage::Ldm => data
            .iter()
            .map(|p| model.spectral_tensor(p).map(Some))
            .collect::<Result<_>>()?,
        _ => vec![None; data.len()],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(config.seed, stage));
    let mut opt = AdamW::new(&model.params, tc.adamw());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(epochs);
    let batch = tc.batch_size.max(1);
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(batch) {
            let mut tape = Tape::new();
            let mut losses = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let p = &data[i];
                let l = item_loss(stage, &model, &mut tape, p, frozen_s[i].as_ref(), &mut rng)?;
                losses.push(l);
            }
            let mut sum = losses[0];
            for l in &losses[1..] {
                sum = tape.add(sum, *l)?;
            }
            let loss = tape.scale(sum, 1.0 / chunk.len() as f64);
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numeric {
                    layer: 0,
                    what: format!("{} loss became non-finite at epoch {epoch}", stage.name()),
                });
            }
            total += value * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            lr = lr_rate(opt.steps() + 1, tc.warmup as u64, tc.base_lr);
            opt.step(&mut model.params, &grads, lr, trainable);
        }
        let metrics = match stage {
            Stage::Classifier | Stage::Ae if epoch == epochs || epoch % 5 == 0 => {
                let (acc, per) = classifier_accuracy(&model, &data)?;
                let mut m = vec![
                    ("label_accuracy".to_string(), acc),
                    (
                        "min_group_accuracy".to_string(),
                        per.iter().cloned().fold(1.0, f64::min),
                    ),
                ];
                if stage == Stage::Ae {
                    let mse = reconstruction_mse(&model, &data)?;
                    m.push(("recon_mse".into(), mse.iter().sum::<f64>() / mse.len() as f64));
                }
                m
            }
            _ => Vec::new(),
        };
        let row = LogRow {
            epoch,
            step: opt.steps(),
            lr,
            loss: total / data.len() as f64,
            metrics,
        };
        log::info!("{} epoch {epoch}: loss {:.6}", stage.name(), row.loss);
        log.push(row);
    }

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ckpt = out.join(CHECKPOINT_FILE);
    model.save(&ckpt, stage)?;
    let log_path = out.join(LOG_FILE);
    fs::write(&log_path, log_csv(&log)).map_err(|e| Error::io(&log_path, e))?;
    if stage == Stage::Ae {
        let mse = reconstruction_mse(&model, &data)?;
        let mut s = String::from("id,mse\n");
        for (e, m) in store.entries.iter().zip(&mse) {
            s.push_str(&format!("{},{m}\n", crate::screen::csv_field(&e.record.id)));
        }
        let p = out.join("reconstruction.csv");
        fs::write(&p, s).map_err(|e| Error::io(&p, e))?;
    }
    let manifest = StageManifest {
        stage,
        config: config.clone(),
        store_hash: store.hash()?,
        parent: parent_hash,
        checkpoint: FileHash {
            path: PathBuf::from(CHECKPOINT_FILE),
            sha256: file_sha256(&ckpt)?,
        },
        steps: opt.steps(),
    };
    let mpath = out.join(MANIFEST_FILE);
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(TrainReport {
        stage,
        log,
        manifest,
        model,
    })
}

fn item_loss(
    stage: Stage,
    model: &Model,
    tape: &mut Tape,
    p: &Prepared,
    frozen_s: Option<&Tensor>,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let params = &model.params;
    match stage {
        Stage::Classifier => {
            let (_, l) = model
                .classifier
                .loss(tape, params, &p.spectrum, &p.formula, &p.labels)?;
            Ok(l)
        }
        Stage::Ae => {
            let (s, cls) = model
                .classifier
                .loss(tape, params, &p.spectrum, &p.formula, &p.labels)?;
            let ae = ae_term(model, tape, p, s, rng)?.0;
            tape.add(ae, cls)
        }
        Stage::Ldm => {
            let s = tape.leaf(frozen_s.expect("frozen features").clone());
            let (ae, z0, zh) = ae_term(model, tape, p, s, rng)?;
            let edges = p.edges();
            let l = ldm_loss(tape, params, &model.denoiser, &model.schedule, &z0, zh, s, &edges, rng)?;
            tape.add(ae, l)
        }
    }
}

/// Autoencoder loss on one molecule; also returns the encoder mean as a
/// constant and the atom embeddings.
fn ae_term(model: &Model, tape: &mut Tape, p: &Prepared, s: Var, rng: &mut ChaCha8Rng) -> Result<(Var, Tensor, Var)> {
    let params = &model.params;
    let zh = model.ae.embed_atoms(tape, params, &p.elements)?;
    let (cond, _) = model.ae.condition(tape, params, zh, s)?;
    let x = tape.leaf(p.coords.clone());
    let noise = centered_noise(p.elements.len(), rng);
    let (loss, enc) = model.ae.loss(tape, params, x, cond, &p.edges(), Some(&noise))?;
    let z0 = tape.value(enc.mean).clone();
    Ok((loss.total, z0, zh))
}

/// Reads a stage manifest.
pub fn read_manifest(path: &Path) -> Result<StageManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_examples() {
        let exact = |s: f64| (512f64 * 3000.0).powf(-0.5) * (s / 3000.0).min(1.0);
        assert!((lr_rate(3000, 3000, 1.0) - exact(3000.0)).abs() < 1e-15);
        assert!((lr_rate(1, 3000, 1.0) - exact(1.0)).abs() < 1e-18);
        // Published values are rounded to five figures.
        assert!((lr_rate(3000, 3000, 1.0) - 8.0688e-4).abs() < 1e-8);
        assert!((lr_rate(1, 3000, 1.0) - 2.6897e-7).abs() < 5e-11);
        let peak = lr_rate(3000, 3000, 1.0);
        assert!(lr_rate(2999, 3000, 1.0) < peak);
        assert!(lr_rate(3001, 3000, 1.0) < peak);
    }
}
