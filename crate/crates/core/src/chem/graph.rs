use serde::{Deserialize, Serialize};

use crate::chem::{Element, ValenceTable};
use crate::error::{Error, Result};

/// A bond with its Kekulé order; `aromatic` marks bonds inside perceived
/// aromatic rings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: u8,
    pub aromatic: bool,
}

impl Bond {
    pub fn other(&self, a: usize) -> usize {
        if self.i == a {
            self.j
        } else {
            self.i
        }
    }
}

/// Neutral molecular graph with explicit hydrogens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MolecularGraph {
    pub elements: Vec<Element>,
    pub bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
    /// Set when bond perception could not reach a valence-consistent state.
    pub unresolved: bool,
}

impl MolecularGraph {
    pub fn new(elements: Vec<Element>) -> Self {
        let n = elements.len();
        MolecularGraph {
            elements,
            bonds: Vec::new(),
            adjacency: vec![Vec::new(); n],
            unresolved: false,
        }
    }

    pub fn from_bonds(elements: Vec<Element>, bonds: &[(usize, usize, u8, bool)]) -> Result<Self> {
        let mut g = MolecularGraph::new(elements);
        for &(i, j, order, aromatic) in bonds {
            g.add_bond(i, j, order, aromatic)?;
        }
        Ok(g)
    }

    pub fn add_bond(&mut self, i: usize, j: usize, order: u8, aromatic: bool) -> Result<usize> {
        let n = self.elements.len();
        if i == j || i >= n || j >= n {
            return Err(Error::Usage(format!("invalid bond {i}-{j} in {n}-atom graph")));
        }
        if order == 0 {
            return Err(Error::Usage("bond order must be positive".into()));
        }
        if self.bond_between(i, j).is_some() {
            return Err(Error::Usage(format!("duplicate bond {i}-{j}")));
        }
        let (i, j) = (i.min(j), i.max(j));
        let k = self.bonds.len();
        self.bonds.push(Bond { i, j, order, aromatic });
        self.adjacency[i].push((j, k));
        self.adjacency[j].push((i, k));
        Ok(k)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// `(neighbour, bond index)` pairs of atom `a`.
    pub fn neighbors(&self, a: usize) -> &[(usize, usize)] {
        &self.adjacency[a]
    }

    pub fn degree(&self, a: usize) -> usize {
        self.adjacency[a].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency[a].iter().find(|(n, _)| *n == b).map(|(_, k)| *k)
    }

    /// Sum of bond orders at atom `a`.
    pub fn valence(&self, a: usize) -> u32 {
        self.adjacency[a].iter().map(|(_, k)| self.bonds[*k].order as u32).sum()
    }

    pub fn hydrogen_count(&self, a: usize) -> usize {
        self.adjacency[a]
            .iter()
            .filter(|(n, _)| self.elements[*n].is_hydrogen())
            .count()
    }

    pub fn is_aromatic_atom(&self, a: usize) -> bool {
        self.adjacency[a].iter().any(|(_, k)| self.bonds[*k].aromatic)
    }

    /// Connected-component label per atom, labels numbered in order of first atom.
    pub fn components(&self) -> Vec<usize> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            label[s] = next;
            while let Some(a) = stack.pop() {
                for &(b, _) in &self.adjacency[a] {
                    if label[b] == usize::MAX {
                        label[b] = next;
                        stack.push(b);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn component_count(&self) -> usize {
        self.components().into_iter().max().map_or(0, |m| m + 1)
    }

    /// Same graph with atoms reordered so that new atom `k` is old atom `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> MolecularGraph {
        let mut inverse = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let mut g = MolecularGraph::new(order.iter().map(|&i| self.elements[i]).collect());
        for b in &self.bonds {
            g.add_bond(inverse[b.i], inverse[b.j], b.order, b.aromatic)
                .expect("permutation keeps bonds valid");
        }
        g.unresolved = self.unresolved;
        g
    }
}

/// Every atom within its maximum valence and a single connected component.
pub fn check_validity(g: &MolecularGraph, table: &ValenceTable) -> bool {
    (0..g.len()).all(|a| g.valence(a) <= table.max(g.elements[a]) as u32) && check_connectivity(g)
}

/// Every atom's valence is exactly one of its allowed values.
pub fn check_stability(g: &MolecularGraph, table: &ValenceTable) -> bool {
    (0..g.len()).all(|a| table.is_allowed(g.elements[a], g.valence(a)))
}

pub fn check_connectivity(g: &MolecularGraph) -> bool {
    g.component_count() <= 1
}
