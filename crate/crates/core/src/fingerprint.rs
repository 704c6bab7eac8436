//! Circular (Morgan-style) fingerprints and Tanimoto similarity.

use std::collections::BTreeSet;

use crate::chem::MolecularGraph;

pub const RADIUS: u32 = 2;
pub const BITS: u64 = 2048;

/// Set bits of a folded fingerprint.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Fingerprint {
    pub bits: BTreeSet<u32>,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn combine(seed: u64, value: u64) -> u64 {
    mix(seed
        ^ value
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(seed << 6)
            .wrapping_add(seed >> 2))
}

/// Radius-2, 2048-bit fingerprint over heavy atoms.
///
/// Atom invariant: (atomic number, heavy degree, total bond order, attached H
/// count, aromatic flag). Bonds contribute code 4 when aromatic, else their order.
pub fn morgan_fingerprint(g: &MolecularGraph) -> Fingerprint {
    let heavy: Vec<usize> = (0..g.len()).filter(|&a| !g.elements[a].is_hydrogen()).collect();
    let mut ids = vec![0u64; g.len()];
    let mut bits = BTreeSet::new();
    for &a in &heavy {
        let h = g.hydrogen_count(a) as u64;
        let deg = g.degree(a) as u64 - h;
        let inv = [
            g.elements[a].atomic_number() as u64,
            deg,
            g.valence(a) as u64,
            h,
            g.is_aromatic_atom(a) as u64,
        ];
        ids[a] = inv.iter().fold(0, |acc, &v| combine(acc, v));
        bits.insert((ids[a] % BITS) as u32);
    }
    for r in 1..=RADIUS {
        let mut next = ids.clone();
        for &a in &heavy {
            let mut env: Vec<(u64, u64)> = g
                .neighbors(a)
                .iter()
                .filter(|(b, _)| !g.elements[*b].is_hydrogen())
                .map(|(b, k)| {
                    let bond = g.bonds[*k];
                    let code = if bond.aromatic { 4 } else { bond.order as u64 };
                    (code, ids[*b])
                })
                .collect();
            env.sort_unstable();
            let mut h = combine(0, r as u64);
            h = combine(h, ids[a]);
            for (code, nid) in env {
                h = combine(h, code);
                h = combine(h, nid);
            }
            next[a] = h;
            bits.insert((h % BITS) as u32);
        }
        ids = next;
    }
    Fingerprint { bits }
}

/// `|a∩b| / |a∪b|`, and 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let inter = a.bits.intersection(&b.bits).count();
    let union = a.bits.len() + b.bits.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
