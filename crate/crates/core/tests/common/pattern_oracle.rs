//! Brute-force substructure oracle, independent of the library matcher.

use std::collections::BTreeSet;

use s2g_core::chem::MolecularGraph;
use s2g_core::smarts::{AtomExpr, BondExpr, Pattern};

/// Straightforward predicate evaluation, independent of the library matcher.
pub fn atom_ok(e: &AtomExpr, g: &MolecularGraph, a: usize) -> bool {
    match e {
        AtomExpr::Any => true,
        AtomExpr::Element { z, aromatic } => {
            g.elements[a].atomic_number() == *z && aromatic.map_or(true, |w| w == g.is_aromatic_atom(a))
        }
        AtomExpr::Connections(n) => g.degree(a) == *n as usize,
        AtomExpr::HCount(n) => g.hydrogen_count(a) == *n as usize,
        AtomExpr::Recursive(p) => !embeddings(p, g, Some(a)).is_empty(),
        AtomExpr::Not(x) => !atom_ok(x, g, a),
        AtomExpr::And(v) | AtomExpr::LowAnd(v) => v.iter().all(|x| atom_ok(x, g, a)),
        AtomExpr::Or(v) => v.iter().any(|x| atom_ok(x, g, a)),
    }
}

pub fn bond_ok(e: BondExpr, g: &MolecularGraph, a: usize, b: usize) -> bool {
    let Some(k) = g.bond_between(a, b) else {
        return false;
    };
    let bond = g.bonds[k];
    match e {
        BondExpr::Single => bond.order == 1 && !bond.aromatic,
        BondExpr::Double => bond.order == 2 && !bond.aromatic,
        BondExpr::Triple => bond.order == 3 && !bond.aromatic,
        BondExpr::Aromatic => bond.aromatic,
        BondExpr::Any => true,
        BondExpr::Implicit => bond.aromatic || bond.order == 1,
    }
}

/// Every injective assignment of pattern atoms to graph atoms, in pattern
/// index order, filtered by all atom and bond predicates.
pub fn embeddings(p: &Pattern, g: &MolecularGraph, first: Option<usize>) -> Vec<Vec<usize>> {
    fn rec(p: &Pattern, g: &MolecularGraph, first: Option<usize>, map: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let k = map.len();
        if k == p.atoms.len() {
            let bonds_hold = p.bonds.iter().all(|b| bond_ok(b.expr, g, map[b.a], map[b.b]));
            if bonds_hold {
                out.push(map.clone());
            }
            return;
        }
        for a in 0..g.len() {
            if map.contains(&a) || (k == 0 && first.is_some_and(|f| f != a)) || !atom_ok(&p.atoms[k], g, a) {
                continue;
            }
            map.push(a);
            rec(p, g, first, map, out);
            map.pop();
        }
    }
    let mut out = Vec::new();
    rec(p, g, first, &mut Vec::new(), &mut out);
    out
}

pub fn unique_sets(ms: &[Vec<usize>]) -> BTreeSet<Vec<usize>> {
    ms.iter()
        .map(|m| {
            let mut m = m.clone();
            m.sort_unstable();
            m
        })
        .collect()
}
