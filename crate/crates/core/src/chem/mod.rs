//! Molecular geometry, bond perception and graph-quality checks.

mod elements;
mod geometry;
mod graph;
mod perceive;
pub mod rings;
mod tables;

pub use elements::Element;
pub use geometry::{hill_formula, parse_xyz, Geometry};
pub use graph::{check_connectivity, check_stability, check_validity, Bond, MolecularGraph};
pub use perceive::{initial_adjacency, perceive_bonds, Perceiver, PerceptionOptions};
pub use tables::{BondLengthTable, ValenceTable};
