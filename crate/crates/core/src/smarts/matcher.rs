//! Subgraph matching of patterns against molecular graphs.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};

use crate::chem::MolecularGraph;
use crate::smarts::{AtomExpr, BondExpr, Pattern};

/// Per-atom facts the predicates read.
struct Target<'a> {
    g: &'a MolecularGraph,
    aromatic: Vec<bool>,
    hydrogens: Vec<usize>,
    recursive: RefCell<HashMap<(usize, usize), bool>>,
}

impl<'a> Target<'a> {
    fn new(g: &'a MolecularGraph) -> Self {
        Target {
            g,
            aromatic: (0..g.len()).map(|a| g.is_aromatic_atom(a)).collect(),
            hydrogens: (0..g.len()).map(|a| g.hydrogen_count(a)).collect(),
            recursive: RefCell::new(HashMap::new()),
        }
    }

    fn atom_matches(&self, e: &AtomExpr, a: usize) -> bool {
        match e {
            AtomExpr::Any => true,
            AtomExpr::Element { z, aromatic } => {
                self.g.elements[a].atomic_number() == *z && aromatic.map_or(true, |want| want == self.aromatic[a])
            }
            AtomExpr::Connections(n) => self.g.degree(a) == *n as usize,
            AtomExpr::HCount(n) => self.hydrogens[a] == *n as usize,
            AtomExpr::Recursive(p) => {
                let key = (&**p as *const Pattern as usize, a);
                if let Some(&hit) = self.recursive.borrow().get(&key) {
                    return hit;
                }
                let mut found = false;
                search(self, p, Some(a), &mut |_| {
                    found = true;
                    false
                });
                self.recursive.borrow_mut().insert(key, found);
                found
            }
            AtomExpr::Not(inner) => !self.atom_matches(inner, a),
            AtomExpr::And(parts) | AtomExpr::LowAnd(parts) => parts.iter().all(|p| self.atom_matches(p, a)),
            AtomExpr::Or(parts) => parts.iter().any(|p| self.atom_matches(p, a)),
        }
    }

    fn bond_matches(&self, e: BondExpr, k: usize) -> bool {
        let b = self.g.bonds[k];
        match e {
            BondExpr::Single => b.order == 1 && !b.aromatic,
            BondExpr::Double => b.order == 2 && !b.aromatic,
            BondExpr::Triple => b.order == 3 && !b.aromatic,
            BondExpr::Aromatic => b.aromatic,
            BondExpr::Any => true,
            BondExpr::Implicit => b.aromatic || b.order == 1,
        }
    }
}

/// Visit order of pattern atoms such that each atom after the first in its
/// component is adjacent to an earlier one, with the connecting bond.
fn visit_order(p: &Pattern) -> Vec<(usize, Option<(usize, usize)>)> {
    let n = p.atoms.len();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        order.push((s, None));
        let mut i = order.len() - 1;
        while i < order.len() {
            let a = order[i].0;
            let mut nb = p.neighbors(a);
            nb.sort_unstable();
            for (b, k) in nb {
                if !seen[b] {
                    seen[b] = true;
                    order.push((b, Some((a, k))));
                }
            }
            i += 1;
        }
    }
    order
}

/// Enumerates embeddings (pattern atom → target atom); `visit` returns false
/// to stop early.
fn search(t: &Target, p: &Pattern, first: Option<usize>, visit: &mut dyn FnMut(&[usize]) -> bool) {
    let order = visit_order(p);
    let n = t.g.len();
    let mut map = vec![usize::MAX; p.atoms.len()];
    let mut used = vec![false; n];
    let neighbours: Vec<Vec<(usize, usize)>> = (0..p.atoms.len()).map(|a| p.neighbors(a)).collect();

    #[allow(clippy::too_many_arguments)]
    fn step(
        t: &Target,
        p: &Pattern,
        order: &[(usize, Option<(usize, usize)>)],
        neighbours: &[Vec<(usize, usize)>],
        depth: usize,
        first: Option<usize>,
        map: &mut [usize],
        used: &mut [bool],
        visit: &mut dyn FnMut(&[usize]) -> bool,
    ) -> bool {
        if depth == order.len() {
            return visit(map);
        }
        let (pa, via) = order[depth];
        let candidates: Vec<usize> = match (via, depth, first) {
            (Some((parent, _)), _, _) => t.g.neighbors(map[parent]).iter().map(|(b, _)| *b).collect(),
            (None, 0, Some(f)) => vec![f],
            (None, _, _) => (0..t.g.len()).collect(),
        };
        for c in candidates {
            if used[c] || !t.atom_matches(&p.atoms[pa], c) {
                continue;
            }
            // Every pattern bond to an already-mapped atom must be present and match.
            let ok = neighbours[pa].iter().all(|&(pb, k)| {
                if map[pb] == usize::MAX {
                    return true;
                }
                match t.g.bond_between(c, map[pb]) {
                    Some(tk) => t.bond_matches(p.bonds[k].expr, tk),
                    None => false,
                }
            });
            if !ok {
                continue;
            }
            map[pa] = c;
            used[c] = true;
            let go_on = step(t, p, order, neighbours, depth + 1, first, map, used, visit);
            map[pa] = usize::MAX;
            used[c] = false;
            if !go_on {
                return false;
            }
        }
        true
    }

    step(t, p, &order, &neighbours, 0, first, &mut map, &mut used, visit);
}

/// All embeddings of `p` in `g`, keeping one per distinct target atom set.
/// Each result lists the target atom of every pattern atom.
pub fn match_pattern(p: &Pattern, g: &MolecularGraph) -> Vec<Vec<usize>> {
    let t = Target::new(g);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut out = Vec::new();
    search(&t, p, None, &mut |m| {
        let mut key = m.to_vec();
        key.sort_unstable();
        if seen.insert(key) {
            out.push(m.to_vec());
        }
        true
    });
    out
}

/// Whether `p` embeds in `g` at all.
pub fn has_match(p: &Pattern, g: &MolecularGraph) -> bool {
    let t = Target::new(g);
    let mut found = false;
    search(&t, p, None, &mut |_| {
        found = true;
        false
    });
    found
}
