//! On-disk dataset store: JSON-lines record shards plus one XYZ file per
//! molecule, filled by screened ingestion.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canon::{canonical_key, CanonicalKey};
use crate::chem::{check_validity, parse_xyz, Geometry, MolecularGraph, Perceiver, PerceptionOptions};
use crate::error::{Error, Result};
use crate::screen::{csv_field, screen_one};
use crate::smarts::FunctionalGroupSet;
use crate::spectra::{broaden_default, Mode, Spectrum, WavenumberGrid};

const SHARD: &str = "records-000.jsonl";

pub type BondRow = (usize, usize, u8, bool);

/// One stored molecule. Either `modes` or `spectrum` carries the IR data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub id: String,
    pub formula: String,
    pub xyz: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<f64>>,
    pub labels: Vec<u8>,
    pub key: String,
    pub bonds: Vec<BondRow>,
}

/// A record with its geometry, graph and gridded spectrum materialised.
#[derive(Clone, Debug)]
pub struct Entry {
    pub record: StoreRecord,
    pub geometry: Geometry,
    pub graph: MolecularGraph,
    pub spectrum: Spectrum,
}

impl Entry {
    pub fn key(&self) -> CanonicalKey {
        CanonicalKey(self.record.key.clone())
    }
}

#[derive(Clone, Debug)]
pub struct DatasetStore {
    pub dir: PathBuf,
    pub entries: Vec<Entry>,
}

/// Input line of a spectra file.
#[derive(Clone, Debug, Deserialize)]
struct SpectrumLine {
    id: String,
    #[serde(default)]
    modes: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    spectrum: Option<Vec<f64>>,
    #[serde(default)]
    reference: Option<Reference>,
}

#[derive(Clone, Debug, Deserialize)]
struct Reference {
    bonds: Vec<BondRow>,
}

/// Records dropped during ingestion, with reasons.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub kept: usize,
    pub dropped: Vec<(String, String)>,
}

impl IngestReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,reason\n");
        for (id, r) in &self.dropped {
            s.push_str(&format!("{},{}\n", csv_field(id), csv_field(r)));
        }
        s
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, data: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    fs::write(path, data).map_err(|e| Error::io(path, e))
}

pub fn grid_spectrum(record: &StoreRecord) -> Result<Spectrum> {
    let grid = WavenumberGrid::default();
    match (&record.modes, &record.spectrum) {
        (_, Some(values)) => Spectrum::new(grid, values.clone()),
        (Some(modes), None) => {
            let modes: Vec<Mode> = modes
                .iter()
                .map(|m| Mode {
                    wavenumber: m[0],
                    intensity: m[1],
                })
                .collect();
            crate::spectra::broaden(
                &modes,
                &grid,
                crate::spectra::HALF_WIDTH,
                crate::spectra::FREQUENCY_SCALE,
            )
        }
        (None, None) => Err(Error::Usage(format!("record {} has no spectrum", record.id))),
    }
}

fn bonds_of(g: &MolecularGraph) -> Vec<BondRow> {
    g.bonds.iter().map(|b| (b.i, b.j, b.order, b.aromatic)).collect()
}

fn ingest_one(
    perceiver: &Perceiver,
    groups: &FunctionalGroupSet,
    xyz_dir: &Path,
    line: &SpectrumLine,
) -> std::result::Result<(StoreRecord, Geometry), String> {
    let path = xyz_dir.join(format!("{}.xyz", line.id));
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let geometry = parse_xyz(&text).map_err(|e| format!("bad XYZ: {e}"))?;
    if line.modes.is_none() && line.spectrum.is_none() {
        return Err("no modes or spectrum".into());
    }
    let opts = PerceptionOptions::default();
    let graph = match &line.reference {
        Some(r) => {
            let reference = MolecularGraph::from_bonds(geometry.elements.clone(), &r.bonds)
                .map_err(|e| format!("bad reference graph: {e}"))?;
            let (row, g) = screen_one(perceiver, &opts, &line.id, &geometry, &canonical_key(&reference));
            if !row.consistent {
                return Err(row.reason);
            }
            g.expect("consistent rows carry a graph")
        }
        None => {
            let g = perceiver
                .perceive(&geometry, &opts)
                .map_err(|e| format!("perception failed: {e}"))?;
            if g.unresolved {
                return Err("perception unresolved".into());
            }
            g
        }
    };
    if !check_validity(&graph, &perceiver.valences) {
        return Err("perceived graph fails validity".into());
    }
    let record = StoreRecord {
        id: line.id.clone(),
        formula: geometry.formula(),
        xyz: format!("xyz/{}.xyz", line.id),
        modes: line.modes.clone(),
        spectrum: line.spectrum.clone(),
        labels: groups.label(&graph),
        key: canonical_key(&graph).0,
        bonds: bonds_of(&graph),
    };
    grid_spectrum(&record).map_err(|e| format!("bad spectrum: {e}"))?;
    Ok((record, geometry))
}

/// Parses, screens and labels every line of `spectra_file` against
/// `xyz_dir/<id>.xyz` and writes the survivors to `out`. Per-record
/// failures are logged and reported, not fatal.
pub fn ingest(xyz_dir: &Path, spectra_file: &Path, out: &Path) -> Result<(DatasetStore, IngestReport)> {
    let text = read(spectra_file)?;
    let mut lines = Vec::new();
    for (n, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let parsed: SpectrumLine = serde_json::from_str(l).map_err(|e| Error::Parse {
            line: n + 1,
            msg: e.to_string(),
        })?;
        lines.push(parsed);
    }
    if lines.is_empty() {
        log::warn!("{} lists no records; writing an empty store", spectra_file.display());
    }
    let perceiver = Perceiver::default();
    let groups = FunctionalGroupSet::default();
    let results: Vec<_> = lines
        .par_iter()
        .map(|l| ingest_one(&perceiver, &groups, xyz_dir, l))
        .collect();

    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    let mut shard = String::new();
    let mut entries = Vec::new();
    for (line, res) in lines.iter().zip(results) {
        let res = res.and_then(|r| {
            if seen.insert(line.id.clone()) {
                Ok(r)
            } else {
                Err("duplicate id".into())
            }
        });
        match res {
            Ok((record, geometry)) => {
                // Keep exactly what a later `open` will read back.
                let text = geometry.to_xyz(&record.id);
                write(&out.join(&record.xyz), &text)?;
                let geometry = parse_xyz(&text)?;
                shard.push_str(&serde_json::to_string(&record)?);
                shard.push('\n');
                entries.push(materialise(record, geometry)?);
            }
            Err(reason) => {
                log::warn!("dropping {}: {reason}", line.id);
                report.dropped.push((line.id.clone(), reason));
            }
        }
    }
    report.kept = entries.len();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join(SHARD), &shard)?;
    write(&out.join("dropped.csv"), &report.to_csv())?;
    Ok((
        DatasetStore {
            dir: out.to_path_buf(),
            entries,
        },
        report,
    ))
}

fn materialise(record: StoreRecord, geometry: Geometry) -> Result<Entry> {
    let graph = MolecularGraph::from_bonds(geometry.elements.clone(), &record.bonds)?;
    let spectrum = grid_spectrum(&record)?;
    Ok(Entry {
        record,
        geometry,
        graph,
        spectrum,
    })
}

impl DatasetStore {
    /// Reads every `records-*.jsonl` shard in name order.
    pub fn open(dir: &Path) -> Result<Self> {
        let mut shards: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("records-") && n.ends_with(".jsonl"))
            })
            .collect();
        shards.sort();
        let mut entries = Vec::new();
        let mut ids = HashSet::new();
        for shard in shards {
            for (n, line) in read(&shard)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: StoreRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: n + 1,
                    msg: e.to_string(),
                })?;
                if !ids.insert(record.id.clone()) {
                    return Err(Error::Usage(format!("duplicate id {} in store", record.id)));
                }
                let geometry = parse_xyz(&read(&dir.join(&record.xyz))?)?;
                entries.push(materialise(record, geometry)?);
            }
        }
        Ok(DatasetStore {
            dir: dir.to_path_buf(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.record.id == id)
    }

    /// SHA-256 over the shard and XYZ contents in record order.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(serde_json::to_string(&e.record)?.as_bytes());
            h.update(read(&self.dir.join(&e.record.xyz))?.as_bytes());
        }
        Ok(hex(&h.finalize()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a gridded spectrum as `wavenumber,intensity` rows.
pub fn spectrum_csv(s: &Spectrum) -> String {
    let mut out = String::from("wavenumber,intensity\n");
    for (x, y) in s.grid.points().zip(&s.intensities) {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

/// Broadens a mode list with the default constants.
pub fn broaden_modes(modes: &[[f64; 2]]) -> Spectrum {
    let modes: Vec<Mode> = modes
        .iter()
        .map(|m| Mode {
            wavenumber: m[0],
            intensity: m[1],
        })
        .collect();
    broaden_default(&modes, &WavenumberGrid::default())
}
