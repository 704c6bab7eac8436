#![allow(dead_code)]

pub mod checks;
pub mod pattern_oracle;
use std::path::PathBuf;

use s2g_core::chem::{parse_xyz, Element, Geometry, MolecularGraph};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub struct Record {
    pub id: String,
    pub geometry: Geometry,
    pub reference: MolecularGraph,
    pub fg_counts: Vec<usize>,
    pub value: serde_json::Value,
}

pub fn load_set(name: &str) -> Vec<Record> {
    let dir = fixtures().join(name);
    let text = std::fs::read_to_string(dir.join("records.jsonl")).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let id = v["id"].as_str().unwrap().to_string();
            let xyz = std::fs::read_to_string(dir.join("xyz").join(format!("{id}.xyz"))).unwrap();
            let geometry = parse_xyz(&xyz).unwrap();
            let bonds: Vec<(usize, usize, u8, bool)> = v["reference"]["bonds"]
                .as_array()
                .unwrap()
                .iter()
                .map(|b| {
                    (
                        b[0].as_u64().unwrap() as usize,
                        b[1].as_u64().unwrap() as usize,
                        b[2].as_u64().unwrap() as u8,
                        b[3].as_bool().unwrap(),
                    )
                })
                .collect();
            let reference = MolecularGraph::from_bonds(geometry.elements.clone(), &bonds).unwrap();
            let fg_counts = v["fg_counts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| c.as_u64().unwrap() as usize)
                .collect();
            Record {
                id,
                geometry,
                reference,
                fg_counts,
                value: v,
            }
        })
        .collect()
}

pub fn element_symbols(g: &MolecularGraph) -> Vec<&'static str> {
    g.elements.iter().map(|e: &Element| e.symbol()).collect()
}

/// Uniform random rotation from a normalised Gaussian quaternion.
pub fn random_rotation<R: rand::Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    use rand_distr::StandardNormal;
    let q: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

pub fn random_translation<R: rand::Rng>(rng: &mut R) -> [f64; 3] {
    [
        rng.gen_range(-5.0..5.0),
        rng.gen_range(-5.0..5.0),
        rng.gen_range(-5.0..5.0),
    ]
}

/// `x·Rᵀ + t` for an N×3 tensor.
pub fn transform(x: &s2g_core::Tensor, r: &[[f64; 3]; 3], t: [f64; 3]) -> s2g_core::Tensor {
    let mut out = x.clone();
    for i in 0..x.rows() {
        for a in 0..3 {
            let v: f64 = (0..3).map(|b| r[a][b] * x.get(i, b)).sum();
            out.set(i, a, v + t[a]);
        }
    }
    out
}

pub fn random_permutation<R: rand::Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub fn ids_in(path: &str) -> Vec<String> {
    std::fs::read_to_string(fixtures().join(path))
        .unwrap()
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

/// Gives zero-initialised coordinate heads random weights so equivariance
/// checks see atoms actually move.
pub fn randomize_coord_heads<R: rand::Rng>(store: &mut s2g_core::ParamStore, rng: &mut R, scale: f64) {
    let ids: Vec<_> = store.ids().filter(|&id| store.name(id).contains(".coord.1.")).collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = s2g_core::Tensor::randn(&shape, rng).scale(scale);
    }
}
