//! Bond and bond-order perception from 3D coordinates.
//!
//! A distance-threshold adjacency is refined in fixed passes: terminal-atom
//! saturation, Hückel aromatic rings, a C/N multiple-bond pass, and valence
//! refinement. When an attempt leaves atoms with disallowed valences, the
//! most over-stretched bond (more than 15 pm beyond its single-bond
//! reference) is removed and perception restarts.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use crate::chem::rings::minimum_cycle_basis;
use crate::chem::{BondLengthTable, Element, Geometry, MolecularGraph, ValenceTable};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct PerceptionOptions {
    /// Distance tolerance added to the reference single-bond length, in pm.
    pub delta_pm: f64,
    pub max_restarts: usize,
    /// Minimum stretch (pm) for a bond to be eligible for removal.
    pub removal_threshold_pm: f64,
}

impl Default for PerceptionOptions {
    fn default() -> Self {
        PerceptionOptions {
            delta_pm: 40.0,
            max_restarts: 10,
            removal_threshold_pm: 15.0,
        }
    }
}

impl PerceptionOptions {
    pub fn with_delta(delta_pm: f64) -> Self {
        PerceptionOptions {
            delta_pm,
            ..Default::default()
        }
    }
}

/// Bond perception with a pair of chemistry tables.
#[derive(Clone, Debug, Default)]
pub struct Perceiver {
    pub valences: ValenceTable,
    pub lengths: BondLengthTable,
}

fn default_perceiver() -> &'static Perceiver {
    static P: OnceLock<Perceiver> = OnceLock::new();
    P.get_or_init(Perceiver::default)
}

/// [`Perceiver::initial_adjacency`] with the bundled tables.
pub fn initial_adjacency(geom: &Geometry, delta_pm: f64) -> Result<MolecularGraph> {
    default_perceiver().initial_adjacency(geom, delta_pm, &BTreeSet::new())
}

/// [`Perceiver::perceive`] with the bundled tables and default options.
pub fn perceive_bonds(geom: &Geometry, delta_pm: f64) -> Result<MolecularGraph> {
    default_perceiver().perceive(geom, &PerceptionOptions::with_delta(delta_pm))
}

impl Perceiver {
    /// Single bonds between every pair closer than reference length + δ,
    /// skipping pairs listed in `removed`.
    pub fn initial_adjacency(
        &self,
        geom: &Geometry,
        delta_pm: f64,
        removed: &BTreeSet<(usize, usize)>,
    ) -> Result<MolecularGraph> {
        let n = geom.len();
        let mut g = MolecularGraph::new(geom.elements.clone());
        for i in 0..n {
            for j in i + 1..n {
                let l = self.lengths.single(geom.elements[i], geom.elements[j])?;
                if 100.0 * geom.distance(i, j) < l + delta_pm && !removed.contains(&(i, j)) {
                    g.add_bond(i, j, 1, false)?;
                }
            }
        }
        Ok(g)
    }

    pub fn perceive(&self, geom: &Geometry, opts: &PerceptionOptions) -> Result<MolecularGraph> {
        let mut removed = BTreeSet::new();
        let mut best: Option<(usize, MolecularGraph)> = None;
        for _ in 0..=opts.max_restarts {
            let mut g = self.initial_adjacency(geom, opts.delta_pm, &removed)?;
            self.assign_orders(&mut g, geom);
            let violations = self.violations(&g);
            if violations == 0 {
                return Ok(g);
            }
            if best.as_ref().map_or(true, |(v, _)| violations < *v) {
                best = Some((violations, g.clone()));
            }
            match self.most_stretched(&g, geom, opts.removal_threshold_pm)? {
                Some(pair) => {
                    removed.insert(pair);
                }
                None => break,
            }
        }
        let (_, mut g) = best.expect("at least one attempt");
        log::warn!(
            "bond perception left {} atoms with disallowed valence",
            self.violations(&g)
        );
        g.unresolved = true;
        Ok(g)
    }

    fn violations(&self, g: &MolecularGraph) -> usize {
        (0..g.len())
            .filter(|&a| !self.valences.is_allowed(g.elements[a], g.valence(a)))
            .count()
    }

    fn most_stretched(&self, g: &MolecularGraph, geom: &Geometry, threshold: f64) -> Result<Option<(usize, usize)>> {
        let mut best: Option<(f64, (usize, usize))> = None;
        for b in &g.bonds {
            let dev = 100.0 * geom.distance(b.i, b.j) - self.lengths.single(g.elements[b.i], g.elements[b.j])?;
            if dev > threshold && best.map_or(true, |(d, _)| dev > d) {
                best = Some((dev, (b.i, b.j)));
            }
        }
        Ok(best.map(|(_, p)| p))
    }

    fn deficit(&self, g: &MolecularGraph, a: usize) -> Option<u32> {
        self.valences.deficit(g.elements[a], g.valence(a))
    }

    fn unsaturated(&self, g: &MolecularGraph, a: usize) -> bool {
        matches!(self.deficit(g, a), Some(d) if d > 0)
    }

    fn room(&self, g: &MolecularGraph, a: usize) -> u32 {
        (self.valences.max(g.elements[a]) as u32).saturating_sub(g.valence(a))
    }

    /// Runs the ordered passes on an all-single-bond graph.
    fn assign_orders(&self, g: &mut MolecularGraph, geom: &Geometry) {
        self.saturate_terminals(g);
        self.aromatic_rings(g);
        self.carbon_nitrogen_pass(g, geom);
        self.refine(g, geom);
    }

    fn saturate_terminals(&self, g: &mut MolecularGraph) {
        loop {
            let mut changed = false;
            for a in 0..g.len() {
                let Some(d) = self.deficit(g, a).filter(|&d| d > 0) else {
                    continue;
                };
                let partner = match g.elements[a] {
                    Element::C | Element::N | Element::O => {
                        let open: Vec<(usize, usize)> = g
                            .neighbors(a)
                            .iter()
                            .copied()
                            .filter(|(b, _)| self.unsaturated(g, *b))
                            .collect();
                        (open.len() == 1).then(|| open[0])
                    }
                    Element::S if g.degree(a) == 1 => Some(g.neighbors(a)[0]),
                    _ => None,
                };
                let Some((b, k)) = partner else { continue };
                let capacity = match self.deficit(g, b) {
                    Some(db) if db > 0 => db,
                    _ => self.room(g, b),
                };
                let raise = d.min(capacity);
                if raise > 0 {
                    g.bonds[k].order += raise as u8;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// π electrons contributed by ring atom `a`, `None` if it rules the ring out.
    fn pi_electrons(&self, g: &MolecularGraph, a: usize, ring_bonds: &[usize]) -> Option<u32> {
        let in_ring = |k: usize| ring_bonds.contains(&k);
        let ring_multiple = g
            .neighbors(a)
            .iter()
            .any(|(_, k)| in_ring(*k) && g.bonds[*k].order >= 2);
        let exo_multiple = g
            .neighbors(a)
            .iter()
            .any(|(_, k)| !in_ring(*k) && g.bonds[*k].order >= 2);
        let val = g.valence(a);
        let deg = g.degree(a);
        match g.elements[a] {
            Element::C => {
                if exo_multiple {
                    None
                } else if ring_multiple || self.deficit(g, a) == Some(1) {
                    Some(1)
                } else {
                    None
                }
            }
            Element::N => {
                if exo_multiple {
                    None
                } else if ring_multiple || (deg == 2 && val == 2) {
                    Some(1)
                } else if deg == 3 && val == 3 {
                    Some(2)
                } else {
                    None
                }
            }
            Element::O | Element::S | Element::Se => (deg == 2 && val == 2).then_some(2),
            _ => None,
        }
    }

    fn aromatic_rings(&self, g: &mut MolecularGraph) {
        let rings = minimum_cycle_basis(g);
        let aromatic: Vec<_> = rings
            .into_iter()
            .filter(|r| {
                let mut pi = 0;
                for &a in &r.atoms {
                    match self.pi_electrons(g, a, &r.bonds) {
                        Some(e) => pi += e,
                        None => return false,
                    }
                }
                pi % 4 == 2
            })
            .collect();
        if aromatic.is_empty() {
            return;
        }
        // Group rings sharing atoms into fused systems.
        let mut system: Vec<usize> = (0..aromatic.len()).collect();
        fn find(s: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while s[r] != r {
                r = s[r];
            }
            s[x] = r;
            r
        }
        for i in 0..aromatic.len() {
            for j in i + 1..aromatic.len() {
                if aromatic[i].atoms.iter().any(|a| aromatic[j].atoms.contains(a)) {
                    let (ri, rj) = (find(&mut system, i), find(&mut system, j));
                    system[ri.max(rj)] = ri.min(rj);
                }
            }
        }
        let roots: BTreeSet<usize> = (0..aromatic.len()).map(|i| find(&mut system, i)).collect();
        for root in roots {
            let members: Vec<usize> = (0..aromatic.len()).filter(|&i| find(&mut system, i) == root).collect();
            let bonds: BTreeSet<usize> = members
                .iter()
                .flat_map(|&i| aromatic[i].bonds.iter().copied())
                .collect();
            let atoms: BTreeSet<usize> = members
                .iter()
                .flat_map(|&i| aromatic[i].atoms.iter().copied())
                .collect();
            let needy: Vec<usize> = atoms
                .iter()
                .copied()
                .filter(|&a| matches!(g.elements[a], Element::C | Element::N) && self.deficit(g, a) == Some(1))
                .collect();
            let Some(matching) = kekule_matching(g, &needy, &bonds) else {
                continue;
            };
            for k in matching {
                g.bonds[k].order = 2;
            }
            for &k in &bonds {
                g.bonds[k].aromatic = true;
            }
        }
    }

    fn carbon_nitrogen_pass(&self, g: &mut MolecularGraph, geom: &Geometry) {
        let mut stuck = vec![false; g.len()];
        loop {
            let pick = (0..g.len())
                .filter(|&a| !stuck[a] && matches!(g.elements[a], Element::C | Element::N))
                .filter_map(|a| self.deficit(g, a).filter(|&d| d > 0).map(|d| (d, a)))
                .max_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)));
            let Some((_, a)) = pick else { break };
            let mut best: Option<(u32, f64, usize, usize)> = None;
            for &(b, k) in g.neighbors(a) {
                let Some(db) = self.deficit(g, b).filter(|&d| d > 0) else {
                    continue;
                };
                let d = geom.distance(a, b);
                let better = match best {
                    None => true,
                    Some((bd, bl, bb, _)) => db > bd || (db == bd && (d < bl || (d == bl && b < bb))),
                };
                if better {
                    best = Some((db, d, b, k));
                }
            }
            if best.is_none() {
                for &(b, k) in g.neighbors(a) {
                    if !matches!(g.elements[b], Element::S | Element::P) || self.room(g, b) == 0 {
                        continue;
                    }
                    let d = geom.distance(a, b);
                    if best.map_or(true, |(_, bl, bb, _)| d < bl || (d == bl && b < bb)) {
                        best = Some((0, d, b, k));
                    }
                }
            }
            match best {
                Some((_, _, _, k)) => g.bonds[k].order += 1,
                None => stuck[a] = true,
            }
        }
    }

    fn refine(&self, g: &mut MolecularGraph, geom: &Geometry) {
        let limit = 4 * g.len() + 8;
        for _ in 0..limit {
            let invalid = |g: &MolecularGraph, a: usize| !self.valences.is_allowed(g.elements[a], g.valence(a));
            let mut step = None;
            for a in 0..g.len() {
                if !invalid(g, a) || self.room(g, a) == 0 {
                    continue;
                }
                let mut best: Option<(bool, f64, usize, usize)> = None;
                for &(b, k) in g.neighbors(a) {
                    if self.room(g, b) == 0 {
                        continue;
                    }
                    let also_invalid = invalid(g, b);
                    let d = geom.distance(a, b);
                    let better = match best {
                        None => true,
                        Some((bi, bl, bb, _)) => {
                            (also_invalid && !bi) || (also_invalid == bi && (d < bl || (d == bl && b < bb)))
                        }
                    };
                    if better {
                        best = Some((also_invalid, d, b, k));
                    }
                }
                if let Some((_, _, _, k)) = best {
                    step = Some(k);
                    break;
                }
            }
            match step {
                Some(k) => g.bonds[k].order += 1,
                None => break,
            }
        }
    }
}

/// Perfect matching of `atoms` over `bonds` (each matched bond becomes a
/// double bond), by ordered backtracking.
fn kekule_matching(g: &MolecularGraph, atoms: &[usize], bonds: &BTreeSet<usize>) -> Option<Vec<usize>> {
    let needy: BTreeSet<usize> = atoms.iter().copied().collect();
    let mut matched = BTreeSet::new();
    let mut chosen = Vec::new();
    let mut budget = 100_000usize;

    fn search(
        g: &MolecularGraph,
        needy: &BTreeSet<usize>,
        bonds: &BTreeSet<usize>,
        matched: &mut BTreeSet<usize>,
        chosen: &mut Vec<usize>,
        budget: &mut usize,
    ) -> bool {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        let Some(&a) = needy.iter().find(|a| !matched.contains(a)) else {
            return true;
        };
        let mut options: Vec<(usize, usize)> = g
            .neighbors(a)
            .iter()
            .copied()
            .filter(|(b, k)| bonds.contains(k) && needy.contains(b) && !matched.contains(b))
            .collect();
        options.sort_unstable();
        for (b, k) in options {
            matched.insert(a);
            matched.insert(b);
            chosen.push(k);
            if search(g, needy, bonds, matched, chosen, budget) {
                return true;
            }
            chosen.pop();
            matched.remove(&a);
            matched.remove(&b);
        }
        false
    }

    search(g, &needy, bonds, &mut matched, &mut chosen, &mut budget).then_some(chosen)
}
