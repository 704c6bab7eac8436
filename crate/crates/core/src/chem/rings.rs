//! Minimum cycle basis ("independent rings") of a molecular graph.

use std::collections::{HashSet, VecDeque};

use crate::chem::MolecularGraph;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ring {
    /// Atoms in cyclic order.
    pub atoms: Vec<usize>,
    /// Bond indices, `bonds[k]` joins `atoms[k]` and `atoms[k + 1]` (cyclically).
    pub bonds: Vec<usize>,
}

impl Ring {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Atoms that survive repeated removal of degree ≤ 1 vertices.
fn ring_core(g: &MolecularGraph) -> Vec<bool> {
    let n = g.len();
    let mut deg: Vec<usize> = (0..n).map(|a| g.degree(a)).collect();
    let mut alive = vec![true; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&a| deg[a] <= 1).collect();
    while let Some(a) = queue.pop_front() {
        if !alive[a] {
            continue;
        }
        alive[a] = false;
        for &(b, _) in g.neighbors(a) {
            if alive[b] {
                deg[b] -= 1;
                if deg[b] == 1 {
                    queue.push_back(b);
                }
            }
        }
    }
    alive
}

/// Horton-style candidates plus greedy GF(2) elimination, shortest first.
pub fn minimum_cycle_basis(g: &MolecularGraph) -> Vec<Ring> {
    let n = g.len();
    let alive = ring_core(g);
    let core_edges: Vec<usize> = (0..g.bonds.len())
        .filter(|&k| alive[g.bonds[k].i] && alive[g.bonds[k].j])
        .collect();
    let core_atoms = alive.iter().filter(|a| **a).count();
    if core_edges.is_empty() {
        return Vec::new();
    }
    let comps = {
        let labels = g.components();
        let set: HashSet<usize> = (0..n).filter(|&a| alive[a]).map(|a| labels[a]).collect();
        set.len()
    };
    let rank = core_edges.len() + comps - core_atoms;
    if rank == 0 {
        return Vec::new();
    }

    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut candidates: Vec<Ring> = Vec::new();
    for root in (0..n).filter(|&a| alive[a]) {
        // BFS tree with neighbours visited in ascending index order.
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut dist = vec![usize::MAX; n];
        dist[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(a) = queue.pop_front() {
            let mut nbrs: Vec<(usize, usize)> = g.neighbors(a).iter().copied().filter(|(b, _)| alive[*b]).collect();
            nbrs.sort_unstable();
            for (b, k) in nbrs {
                if dist[b] == usize::MAX {
                    dist[b] = dist[a] + 1;
                    parent[b] = Some((a, k));
                    queue.push_back(b);
                }
            }
        }
        let path = |mut v: usize| -> (Vec<usize>, Vec<usize>) {
            let (mut atoms, mut bonds) = (vec![v], Vec::new());
            while let Some((p, k)) = parent[v] {
                atoms.push(p);
                bonds.push(k);
                v = p;
            }
            atoms.reverse();
            bonds.reverse();
            (atoms, bonds)
        };
        for &k in &core_edges {
            let b = g.bonds[k];
            if dist[b.i] == usize::MAX || dist[b.j] == usize::MAX {
                continue;
            }
            if parent[b.i].map(|p| p.1) == Some(k) || parent[b.j].map(|p| p.1) == Some(k) {
                continue;
            }
            let (pu, bu) = path(b.i);
            let (pv, bv) = path(b.j);
            let su: HashSet<usize> = pu[1..].iter().copied().collect();
            if pv[1..].iter().any(|a| su.contains(a)) {
                continue;
            }
            let mut atoms = pu.clone();
            atoms.extend(pv[1..].iter().rev());
            let mut bonds = bu.clone();
            bonds.push(k);
            bonds.extend(bv.iter().rev());
            let mut key = bonds.clone();
            key.sort_unstable();
            if seen.insert(key) {
                candidates.push(Ring { atoms, bonds });
            }
        }
    }
    candidates.sort_by_key(|r| {
        let mut a = r.atoms.clone();
        a.sort_unstable();
        (r.len(), a)
    });

    let words = g.bonds.len().div_ceil(64);
    let mut basis: Vec<(usize, Vec<u64>)> = Vec::new();
    let mut out = Vec::new();
    for ring in candidates {
        let mut v = vec![0u64; words];
        for &k in &ring.bonds {
            v[k / 64] ^= 1 << (k % 64);
        }
        for (pivot, row) in &basis {
            if v[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (x, y) in v.iter_mut().zip(row) {
                    *x ^= y;
                }
            }
        }
        let Some(pivot) = (0..g.bonds.len()).find(|&k| v[k / 64] >> (k % 64) & 1 == 1) else {
            continue;
        };
        for (_, row) in basis.iter_mut() {
            if row[pivot / 64] >> (pivot % 64) & 1 == 1 {
                for (x, y) in row.iter_mut().zip(&v) {
                    *x ^= y;
                }
            }
        }
        basis.push((pivot, v));
        out.push(canonical_rotation(ring));
        if out.len() == rank {
            break;
        }
    }
    out
}

/// Starts the ring at its lowest atom, walking toward the lower neighbour.
fn canonical_rotation(ring: Ring) -> Ring {
    let n = ring.atoms.len();
    let start = (0..n).min_by_key(|&i| ring.atoms[i]).unwrap_or(0);
    let next = ring.atoms[(start + 1) % n];
    let prev = ring.atoms[(start + n - 1) % n];
    let mut atoms = Vec::with_capacity(n);
    let mut bonds = Vec::with_capacity(n);
    if next <= prev {
        for s in 0..n {
            atoms.push(ring.atoms[(start + s) % n]);
            bonds.push(ring.bonds[(start + s) % n]);
        }
    } else {
        for s in 0..n {
            atoms.push(ring.atoms[(start + n - s) % n]);
            bonds.push(ring.bonds[(start + 2 * n - s - 1) % n]);
        }
    }
    Ring { atoms, bonds }
}
