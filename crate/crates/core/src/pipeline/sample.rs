//! Conditional sampling campaigns and their evaluation.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::canon::canonical_key;
use crate::chem::{
    check_connectivity, check_stability, check_validity, parse_xyz, Element, Geometry, Perceiver, PerceptionOptions,
};
use crate::diffusion::sample_latent;
use crate::egnn::EdgeIndex;
use crate::error::{Error, Result};
use crate::fingerprint::{morgan_fingerprint, tanimoto};
use crate::pipeline::model::{Model, Prepared};
use crate::pipeline::store::DatasetStore;
use crate::spectra::{sis, sis_star, Spectrum};
use crate::tensor::Tensor;

pub const SAMPLES_FILE: &str = "samples.jsonl";

/// One line of the sampling manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub spectrum_id: String,
    pub sample: usize,
    pub seed: u64,
    pub path: String,
}

/// Seed of sample `k` for spectrum number `i`.
pub fn sample_seed(base: u64, spectrum: usize, sample: usize) -> u64 {
    let mut z = base.wrapping_add(
        ((spectrum as u64) << 32 | sample as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fixed inputs of one sampling condition.
pub struct Condition {
    pub elements: Vec<Element>,
    pub s: Tensor,
    pub z_h: Tensor,
    /// Autoencoder node features for decoding.
    pub cond: Tensor,
}

impl Condition {
    pub fn new(model: &Model, p: &Prepared) -> Result<Self> {
        let mut t = Tape::new();
        let s = model.spectral_features(&mut t, p)?;
        let zh = model.ae.embed_atoms(&mut t, &model.params, &p.elements)?;
        let (cond, _) = model.ae.condition(&mut t, &model.params, zh, s)?;
        Ok(Condition {
            elements: p.elements.clone(),
            s: t.value(s).clone(),
            z_h: t.value(zh).clone(),
            cond: t.value(cond).clone(),
        })
    }
}

/// Runs the reverse diffusion for one condition and decodes it.
/// `on_step` sees each latent `z_t`.
pub fn sample_with(model: &Model, c: &Condition, seed: u64, on_step: impl FnMut(usize, &Tensor)) -> Result<Geometry> {
    let n = c.elements.len();
    let edges = EdgeIndex::complete(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0 = sample_latent(
        n,
        &model.schedule,
        &mut rng,
        |z, t| {
            let mut tape = Tape::new();
            let zv = tape.leaf(z.clone());
            let s = tape.leaf(c.s.clone());
            let zh = tape.leaf(c.z_h.clone());
            let out = model.denoiser.forward(&mut tape, &model.params, zv, t, zh, s, &edges)?;
            Ok(tape.value(out.eps).clone())
        },
        on_step,
    )?;
    let mut tape = Tape::new();
    let z = tape.leaf(z0);
    let cond = tape.leaf(c.cond.clone());
    let x = model.ae.decode(&mut tape, &model.params, z, cond, &edges)?;
    let x = tape.value(x);
    Geometry::new(
        c.elements.clone(),
        (0..n).map(|i| [x.get(i, 0), x.get(i, 1), x.get(i, 2)]).collect(),
    )
}

pub fn sample(model: &Model, c: &Condition, seed: u64) -> Result<Geometry> {
    sample_with(model, c, seed, |_, _| {})
}

/// Draws `k` geometries per store record, writes them as
/// `samples/<id>/<k>.xyz` plus a JSON-lines manifest under `out`.
pub fn run_sampling(
    model: &Model,
    store: &DatasetStore,
    k: usize,
    base_seed: u64,
    out: &Path,
) -> Result<Vec<SampleRecord>> {
    let conditions: Vec<Condition> = store
        .entries
        .iter()
        .map(|e| Prepared::new(e).and_then(|p| Condition::new(model, &p)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..store.len()).flat_map(|i| (0..k).map(move |s| (i, s))).collect();
    let results: Vec<Result<(SampleRecord, String)>> = jobs
        .par_iter()
        .map(|&(i, s)| {
            let id = &store.entries[i].record.id;
            let seed = sample_seed(base_seed, i, s);
            let g = sample(model, &conditions[i], seed)?;
            let rec = SampleRecord {
                spectrum_id: id.clone(),
                sample: s,
                seed,
                path: format!("samples/{id}/{s}.xyz"),
            };
            Ok((rec, g.to_xyz(&format!("{id} sample {s} seed {seed}"))))
        })
        .collect();
    let mut manifest = String::new();
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        let (rec, xyz) = r?;
        let path = out.join(&rec.path);
        fs::create_dir_all(path.parent().expect("sample path has a parent")).map_err(|e| Error::io(&path, e))?;
        fs::write(&path, xyz).map_err(|e| Error::io(&path, e))?;
        manifest.push_str(&serde_json::to_string(&rec)?);
        manifest.push('\n');
        records.push(rec);
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mpath = out.join(SAMPLES_FILE);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(records)
}

/// Loads a sampling manifest and its geometries.
pub fn load_samples(dir: &Path) -> Result<Vec<(SampleRecord, Geometry)>> {
    let mpath = dir.join(SAMPLES_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: n + 1,
            msg: e.to_string(),
        })?;
        let p = dir.join(&rec.path);
        let g = parse_xyz(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
        out.push((rec, g));
    }
    Ok(out)
}

/// Scores of one sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleScore {
    pub spectrum_id: String,
    pub sample: usize,
    pub valid: bool,
    pub stable: bool,
    pub connected: bool,
    pub matched: bool,
    pub sim_g: f64,
    /// `None` when the sample is unstable or its graph has no oracle spectrum.
    pub sis: Option<f64>,
    pub sis_star: Option<f64>,
    pub oracle_found: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub id: String,
    pub samples: usize,
    pub validity: f64,
    pub stability: f64,
    pub connectivity: f64,
    pub sim_g: f64,
    pub max_sim_g: f64,
    pub matched: bool,
    pub sis: Option<f64>,
    pub max_sis: Option<f64>,
    pub sis_star: Option<f64>,
    /// Stable samples without an oracle spectrum.
    pub sis_unavailable: usize,
}

/// Aggregates in the column order of the usual comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub spectra: usize,
    pub samples: usize,
    pub sim_g: f64,
    pub max_sim_g: f64,
    pub mol_acc_pct: f64,
    pub sis: Option<f64>,
    pub max_sis: Option<f64>,
    pub sis_star: Option<f64>,
    pub validity: f64,
    pub stability: f64,
    pub connectivity: f64,
    pub sis_unavailable: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub scores: Vec<SampleScore>,
    pub spectra: Vec<SpectrumSummary>,
    pub aggregate: Aggregate,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// Scores samples against the store's reference graphs. Oracle spectra for
/// sampled graphs are looked up by canonical key in `store` and `oracles`.
pub fn evaluate(
    samples: &[(SampleRecord, Geometry)],
    store: &DatasetStore,
    oracles: &[&DatasetStore],
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Usage("no samples to evaluate".into()));
    }
    let mut table: HashMap<String, &Spectrum> = HashMap::new();
    for s in std::iter::once(store).chain(oracles.iter().copied()) {
        for e in &s.entries {
            table.entry(e.record.key.clone()).or_insert(&e.spectrum);
        }
    }
    // Fixed order makes the aggregates independent of input order.
    let mut ordered: Vec<&(SampleRecord, Geometry)> = samples.iter().collect();
    ordered.sort_by(|a, b| (&a.0.spectrum_id, a.0.sample).cmp(&(&b.0.spectrum_id, b.0.sample)));

    let perceiver = Perceiver::default();
    let opts = PerceptionOptions::default();
    let scores: Vec<SampleScore> = ordered
        .par_iter()
        .map(|(rec, geom)| {
            let entry = store
                .get(&rec.spectrum_id)
                .ok_or_else(|| Error::Usage(format!("sample refers to unknown spectrum {}", rec.spectrum_id)))?;
            let reference_fp = morgan_fingerprint(&entry.graph);
            let mut score = SampleScore {
                spectrum_id: rec.spectrum_id.clone(),
                sample: rec.sample,
                valid: false,
                stable: false,
                connected: false,
                matched: false,
                sim_g: 0.0,
                sis: None,
                sis_star: None,
                oracle_found: false,
            };
            let Ok(g) = perceiver.perceive(geom, &opts) else {
                return Ok(score);
            };
            score.valid = check_validity(&g, &perceiver.valences);
            score.stable = check_stability(&g, &perceiver.valences);
            score.connected = check_connectivity(&g);
            let key = canonical_key(&g);
            score.matched = key.0 == entry.record.key;
            score.sim_g = tanimoto(&morgan_fingerprint(&g), &reference_fp);
            if score.stable {
                if let Some(oracle) = table.get(&key.0) {
                    score.oracle_found = true;
                    score.sis = Some(sis(oracle, &entry.spectrum)?);
                    score.sis_star = Some(sis_star(oracle, &entry.spectrum)?);
                }
            }
            Ok(score)
        })
        .collect::<Result<_>>()?;

    let mut spectra = Vec::new();
    let mut i = 0;
    while i < scores.len() {
        let id = scores[i].spectrum_id.clone();
        let j = scores[i..]
            .iter()
            .position(|s| s.spectrum_id != id)
            .map_or(scores.len(), |k| i + k);
        let group = &scores[i..j];
        let n = group.len() as f64;
        let frac = |f: &dyn Fn(&SampleScore) -> bool| group.iter().filter(|s| f(s)).count() as f64 / n;
        let sims: Vec<f64> = group.iter().map(|s| s.sim_g).collect();
        let sis_v: Vec<f64> = group.iter().filter_map(|s| s.sis).collect();
        let star_v: Vec<f64> = group.iter().filter_map(|s| s.sis_star).collect();
        spectra.push(SpectrumSummary {
            id,
            samples: group.len(),
            validity: frac(&|s| s.valid),
            stability: frac(&|s| s.stable),
            connectivity: frac(&|s| s.connected),
            sim_g: mean(&sims).unwrap_or(0.0),
            max_sim_g: sims.iter().cloned().fold(0.0, f64::max),
            matched: group.iter().any(|s| s.matched),
            sis: mean(&sis_v),
            max_sis: sis_v.iter().cloned().reduce(f64::max),
            sis_star: mean(&star_v),
            sis_unavailable: group.iter().filter(|s| s.stable && !s.oracle_found).count(),
        });
        i = j;
    }
    let col = |f: &dyn Fn(&SpectrumSummary) -> f64| mean(&spectra.iter().map(f).collect::<Vec<_>>()).unwrap_or(0.0);
    let col_opt = |f: &dyn Fn(&SpectrumSummary) -> Option<f64>| mean(&spectra.iter().filter_map(f).collect::<Vec<_>>());
    let aggregate = Aggregate {
        spectra: spectra.len(),
        samples: scores.len(),
        sim_g: col(&|s| s.sim_g),
        max_sim_g: col(&|s| s.max_sim_g),
        mol_acc_pct: 100.0 * col(&|s| if s.matched { 1.0 } else { 0.0 }),
        sis: col_opt(&|s| s.sis),
        max_sis: col_opt(&|s| s.max_sis),
        sis_star: col_opt(&|s| s.sis_star),
        validity: col(&|s| s.validity),
        stability: col(&|s| s.stability),
        connectivity: col(&|s| s.connectivity),
        sis_unavailable: spectra.iter().map(|s| s.sis_unavailable).sum(),
    };
    Ok(EvalReport {
        scores,
        spectra,
        aggregate,
    })
}

impl EvalReport {
    /// Aggregate row under the comparison-table headers.
    pub fn aggregate_csv(&self) -> String {
        let a = &self.aggregate;
        format!(
            "sim_g,max_sim_g,mol_acc_pct,SIS,max_SIS,SIS_star,validity,stability,connectivity,spectra,samples,sis_unavailable\n\
             {:.6},{:.6},{:.2},{},{},{},{:.6},{:.6},{:.6},{},{},{}\n",
            a.sim_g,
            a.max_sim_g,
            a.mol_acc_pct,
            opt(a.sis),
            opt(a.max_sis),
            opt(a.sis_star),
            a.validity,
            a.stability,
            a.connectivity,
            a.spectra,
            a.samples,
            a.sis_unavailable
        )
    }

    pub fn spectra_csv(&self) -> String {
        let mut s = String::from(
            "id,samples,sim_g,max_sim_g,matched,SIS,max_SIS,SIS_star,validity,stability,connectivity,sis_unavailable\n",
        );
        for r in &self.spectra {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{},{},{},{},{:.6},{:.6},{:.6},{}\n",
                crate::screen::csv_field(&r.id),
                r.samples,
                r.sim_g,
                r.max_sim_g,
                r.matched,
                opt(r.sis),
                opt(r.max_sis),
                opt(r.sis_star),
                r.validity,
                r.stability,
                r.connectivity,
                r.sis_unavailable
            ));
        }
        s
    }

    pub fn samples_csv(&self) -> String {
        let mut s = String::from("spectrum_id,sample,valid,stable,connected,matched,sim_g,SIS,SIS_star\n");
        for r in &self.scores {
            s.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{},{}\n",
                crate::screen::csv_field(&r.spectrum_id),
                r.sample,
                r.valid,
                r.stable,
                r.connected,
                r.matched,
                r.sim_g,
                opt(r.sis),
                opt(r.sis_star)
            ));
        }
        s
    }

    /// Writes `aggregate.csv`, `spectra.csv` and `samples.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("aggregate.csv", self.aggregate_csv()),
            ("spectra.csv", self.spectra_csv()),
            ("samples.csv", self.samples_csv()),
        ];
        let mut out = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            out.push(p);
        }
        Ok(out)
    }
}
