//! Canonical graph identity.
//!
//! Hydrogens bonded to exactly one heavy atom are folded into that atom's H
//! count. Atoms are then ordered by colour refinement with individualisation
//! of tied atoms; among all discrete orderings reached, the lexicographically
//! smallest encoding of the relabelled graph is the key. Because the key spells
//! out every atom and bond, equal keys mean isomorphic graphs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::chem::MolecularGraph;
use crate::error::{Error, Result};

/// Canonical labelled-graph encoding.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalKey(pub String);

impl std::fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Hydrogen-collapsed view: atom labels `(Z, H count)` and labelled edges.
#[derive(Clone, Debug)]
struct Collapsed {
    labels: Vec<(u8, u8)>,
    /// Original atom index of each collapsed atom.
    origin: Vec<usize>,
    adj: Vec<Vec<(usize, u8)>>,
}

fn bond_label(order: u8, aromatic: bool) -> u8 {
    if aromatic {
        4
    } else {
        order
    }
}

fn collapse(g: &MolecularGraph) -> Collapsed {
    let heavy_neighbours = |a: usize| {
        g.neighbors(a)
            .iter()
            .filter(|(b, _)| !g.elements[*b].is_hydrogen())
            .count()
    };
    let folded: Vec<bool> = (0..g.len())
        .map(|a| g.elements[a].is_hydrogen() && g.degree(a) == 1 && heavy_neighbours(a) == 1)
        .collect();
    let mut index = vec![usize::MAX; g.len()];
    let mut origin = Vec::new();
    for a in 0..g.len() {
        if !folded[a] {
            index[a] = origin.len();
            origin.push(a);
        }
    }
    let mut labels: Vec<(u8, u8)> = origin.iter().map(|&a| (g.elements[a].atomic_number(), 0)).collect();
    let mut adj = vec![Vec::new(); origin.len()];
    for b in &g.bonds {
        match (folded[b.i], folded[b.j]) {
            (false, false) => {
                let l = bond_label(b.order, b.aromatic);
                adj[index[b.i]].push((index[b.j], l));
                adj[index[b.j]].push((index[b.i], l));
            }
            (true, false) => labels[index[b.j]].1 += 1,
            (false, true) => labels[index[b.i]].1 += 1,
            (true, true) => unreachable!("folded hydrogens have a heavy neighbour"),
        }
    }
    Collapsed { labels, origin, adj }
}

/// Replaces colours by the rank of `sig` among all atoms.
fn rank<T: Ord + Clone>(sig: &[T]) -> Vec<usize> {
    let mut sorted: Vec<T> = sig.to_vec();
    sorted.sort();
    sorted.dedup();
    sig.iter().map(|s| sorted.binary_search(s).expect("present")).collect()
}

fn refine(c: &Collapsed, mut colors: Vec<usize>) -> Vec<usize> {
    let mut classes = colors.iter().collect::<std::collections::BTreeSet<_>>().len();
    loop {
        let sig: Vec<(usize, Vec<(u8, usize)>)> = (0..colors.len())
            .map(|a| {
                let mut env: Vec<(u8, usize)> = c.adj[a].iter().map(|&(b, l)| (l, colors[b])).collect();
                env.sort_unstable();
                (colors[a], env)
            })
            .collect();
        let next = rank(&sig);
        let n = next.iter().collect::<std::collections::BTreeSet<_>>().len();
        colors = next;
        if n == classes {
            return colors;
        }
        classes = n;
    }
}

/// Flat encoding of the graph relabelled so atom `order[k]` sits at position `k`.
fn encode(c: &Collapsed, order: &[usize]) -> Vec<u32> {
    let mut pos = vec![0; order.len()];
    for (k, &a) in order.iter().enumerate() {
        pos[a] = k;
    }
    let mut out: Vec<u32> = Vec::with_capacity(order.len() * 2 + 8);
    for &a in order {
        out.push(c.labels[a].0 as u32);
        out.push(c.labels[a].1 as u32);
    }
    let mut edges: Vec<(u32, u32, u32)> = Vec::new();
    for a in 0..c.adj.len() {
        for &(b, l) in &c.adj[a] {
            let (x, y) = (pos[a] as u32, pos[b] as u32);
            if x < y {
                edges.push((x, y, l as u32));
            }
        }
    }
    edges.sort_unstable();
    for (x, y, l) in edges {
        out.extend([x, y, l]);
    }
    out
}

struct Search<'a> {
    c: &'a Collapsed,
    best: Option<(Vec<u32>, Vec<usize>)>,
    leaves: usize,
}

const LEAF_BUDGET: usize = 20_000;

impl Search<'_> {
    fn run(&mut self, colors: Vec<usize>) {
        let colors = refine(self.c, colors);
        let n = colors.len();
        let mut counts = BTreeMap::<usize, Vec<usize>>::new();
        for (a, &col) in colors.iter().enumerate() {
            counts.entry(col).or_default().push(a);
        }
        let target = counts.iter().find(|(_, v)| v.len() > 1).map(|(k, v)| (*k, v.clone()));
        let Some((color, cell)) = target else {
            let mut order = vec![0; n];
            for (a, &col) in colors.iter().enumerate() {
                order[col] = a;
            }
            let enc = encode(self.c, &order);
            self.leaves += 1;
            if self.best.as_ref().map_or(true, |(b, _)| enc < *b) {
                self.best = Some((enc, order));
            }
            return;
        };
        // Atoms with identical labelled neighbourhoods are interchangeable;
        // branching on one of each twin class is enough.
        let mut seen: Vec<Vec<(usize, u8)>> = Vec::new();
        for v in cell {
            let mut nb = self.c.adj[v].clone();
            nb.sort_unstable();
            if seen.contains(&nb) {
                continue;
            }
            seen.push(nb);
            if self.leaves >= LEAF_BUDGET && self.best.is_some() {
                log::warn!("canonical search budget exhausted");
                return;
            }
            let sig: Vec<(usize, bool)> = colors
                .iter()
                .enumerate()
                .map(|(a, &col)| (col, !(col == color && a == v)))
                .collect();
            self.run(rank(&sig));
        }
    }
}

/// Canonical ordering of the collapsed graph.
fn canonical_order(c: &Collapsed) -> (Vec<u32>, Vec<usize>) {
    if c.labels.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let initial: Vec<(u8, u8, usize)> = (0..c.labels.len())
        .map(|a| (c.labels[a].0, c.labels[a].1, c.adj[a].len()))
        .collect();
    let mut s = Search {
        c,
        best: None,
        leaves: 0,
    };
    s.run(rank(&initial));
    s.best.expect("at least one leaf")
}

fn symbol(z: u8) -> &'static str {
    crate::chem::Element::from_atomic_number(z).map_or("?", |e| e.symbol())
}

/// Order-independent identity of a molecular graph.
pub fn canonical_key(g: &MolecularGraph) -> CanonicalKey {
    let c = collapse(g);
    let (_, order) = canonical_order(&c);
    let mut pos = vec![0; order.len()];
    for (k, &a) in order.iter().enumerate() {
        pos[a] = k;
    }
    let mut s = String::new();
    for (k, &a) in order.iter().enumerate() {
        if k > 0 {
            s.push('.');
        }
        let (z, h) = c.labels[a];
        s.push_str(symbol(z));
        match h {
            0 => {}
            1 => s.push('H'),
            _ => {
                let _ = write!(s, "H{h}");
            }
        }
    }
    s.push('|');
    let mut edges = Vec::new();
    for a in 0..c.adj.len() {
        for &(b, l) in &c.adj[a] {
            if pos[a] < pos[b] {
                edges.push((pos[a], pos[b], l));
            }
        }
    }
    edges.sort_unstable();
    for (n, (x, y, l)) in edges.into_iter().enumerate() {
        if n > 0 {
            s.push(',');
        }
        let sym = match l {
            1 => '-',
            2 => '=',
            3 => '#',
            _ => ':',
        };
        let _ = write!(s, "{x}{sym}{y}");
    }
    CanonicalKey(s)
}

/// Explicit isomorphism between the hydrogen-collapsed graphs, as a map from
/// atoms of `a` to atoms of `b` (collapsed hydrogens are absent from the map).
pub fn find_isomorphism(a: &MolecularGraph, b: &MolecularGraph) -> Option<BTreeMap<usize, usize>> {
    let (ca, cb) = (collapse(a), collapse(b));
    if ca.labels.len() != cb.labels.len() {
        return None;
    }
    let (_, oa) = canonical_order(&ca);
    let (_, ob) = canonical_order(&cb);
    let mut map = vec![0; oa.len()];
    for (&x, &y) in oa.iter().zip(&ob) {
        map[x] = y;
    }
    for x in 0..ca.labels.len() {
        if ca.labels[x] != cb.labels[map[x]] || ca.adj[x].len() != cb.adj[map[x]].len() {
            return None;
        }
        for &(y, l) in &ca.adj[x] {
            if !cb.adj[map[x]].contains(&(map[y], l)) {
                return None;
            }
        }
    }
    Some(
        (0..ca.labels.len())
            .map(|x| (ca.origin[x], cb.origin[map[x]]))
            .collect(),
    )
}

/// Key equality confirmed by an explicit isomorphism.
pub fn same_molecule(a: &MolecularGraph, b: &MolecularGraph) -> bool {
    canonical_key(a) == canonical_key(b) && find_isomorphism(a, b).is_some()
}

/// Fraction of cases where at least one sample matches the reference.
pub fn molecular_accuracy(samples: &[Vec<MolecularGraph>], references: &[MolecularGraph]) -> Result<f64> {
    if samples.len() != references.len() {
        return Err(Error::dim(format!(
            "{} sample groups for {} references",
            samples.len(),
            references.len()
        )));
    }
    if references.is_empty() {
        return Ok(0.0);
    }
    let hits = samples
        .iter()
        .zip(references)
        .filter(|(group, r)| {
            let key = canonical_key(r);
            group
                .iter()
                .any(|s| canonical_key(s) == key && find_isomorphism(s, r).is_some())
        })
        .count();
    Ok(hits as f64 / references.len() as f64)
}
