//! Substructure patterns (a SMARTS subset) and functional-group labelling.

mod matcher;
mod pattern;

pub use matcher::{has_match, match_pattern};
pub use pattern::{normalize, parse_pattern, write_pattern, AtomExpr, BondExpr, Pattern, PatternBond};

use crate::chem::MolecularGraph;
use crate::error::{Error, Result};

const DEFAULT_GROUPS: &str = include_str!("../../data/functional_groups.tsv");

/// Ordered named patterns; the order fixes the label index.
#[derive(Clone, Debug)]
pub struct FunctionalGroupSet {
    pub names: Vec<String>,
    pub smarts: Vec<String>,
    pub patterns: Vec<Pattern>,
}

impl FunctionalGroupSet {
    /// Parses `name<TAB>pattern` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut set = FunctionalGroupSet {
            names: Vec::new(),
            smarts: Vec::new(),
            patterns: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, smarts) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected `name<TAB>pattern`".into(),
            })?;
            let pattern = parse_pattern(smarts.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("{name}: {e}"),
            })?;
            set.names.push(name.trim().to_string());
            set.smarts.push(smarts.trim().to_string());
            set.patterns.push(pattern);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Multi-hot label vector: 1 where the group occurs at least once.
    pub fn label(&self, g: &MolecularGraph) -> Vec<u8> {
        self.patterns.iter().map(|p| has_match(p, g) as u8).collect()
    }

    /// Number of unique matches per group.
    pub fn counts(&self, g: &MolecularGraph) -> Vec<usize> {
        self.patterns.iter().map(|p| match_pattern(p, g).len()).collect()
    }
}

impl Default for FunctionalGroupSet {
    fn default() -> Self {
        FunctionalGroupSet::parse(DEFAULT_GROUPS).expect("bundled functional groups")
    }
}

/// [`FunctionalGroupSet::label`].
pub fn label_functional_groups(g: &MolecularGraph, groups: &FunctionalGroupSet) -> Vec<u8> {
    groups.label(g)
}
