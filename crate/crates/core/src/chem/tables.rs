//! Valence and reference bond-length tables, loaded from plain-text data files.

use std::collections::HashMap;

use crate::chem::Element;
use crate::error::{Error, Result};

const VALENCES: &str = include_str!("../../data/valences.txt");
const RADII: &str = include_str!("../../data/covalent_radii_v1.txt");

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

/// Allowed total valences per element, ascending.
#[derive(Clone, Debug)]
pub struct ValenceTable {
    allowed: HashMap<Element, Vec<u8>>,
}

impl ValenceTable {
    /// Parses `element v1 v2 ...` lines; every supported element must appear.
    pub fn parse(text: &str) -> Result<Self> {
        let mut allowed = HashMap::new();
        for (line, fields) in data_lines(text) {
            let element: Element = fields[0].parse()?;
            let mut vals = fields[1..]
                .iter()
                .map(|v| {
                    v.parse::<u8>()
                        .map_err(|_| Error::Table(format!("line {line}: bad valence `{v}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.is_empty() {
                return Err(Error::Table(format!("line {line}: no valences for {element}")));
            }
            vals.sort_unstable();
            vals.dedup();
            allowed.insert(element, vals);
        }
        if let Some(e) = Element::ALL.iter().find(|e| !allowed.contains_key(e)) {
            return Err(Error::Table(format!("no valence entry for {e}")));
        }
        Ok(ValenceTable { allowed })
    }

    pub fn allowed(&self, e: Element) -> &[u8] {
        &self.allowed[&e]
    }

    pub fn max(&self, e: Element) -> u8 {
        *self.allowed(e).last().expect("non-empty")
    }

    pub fn is_allowed(&self, e: Element, valence: u32) -> bool {
        self.allowed(e).iter().any(|&v| v as u32 == valence)
    }

    /// Bond orders still missing to reach the nearest allowed valence at or
    /// above `valence`; `None` when `valence` already exceeds the maximum.
    pub fn deficit(&self, e: Element, valence: u32) -> Option<u32> {
        self.allowed(e)
            .iter()
            .map(|&v| v as u32)
            .find(|&v| v >= valence)
            .map(|v| v - valence)
    }
}

impl Default for ValenceTable {
    fn default() -> Self {
        ValenceTable::parse(VALENCES).expect("bundled valence table")
    }
}

/// Reference bond lengths in pm for element pairs and orders 1–3.
#[derive(Clone, Debug)]
pub struct BondLengthTable {
    radii: HashMap<Element, [Option<f64>; 3]>,
}

impl BondLengthTable {
    /// Parses `element single double triple` radius lines (pm, `-` for none).
    pub fn parse_radii(text: &str) -> Result<Self> {
        let mut radii = HashMap::new();
        for (line, fields) in data_lines(text) {
            if fields.len() != 4 {
                return Err(Error::Table(format!("line {line}: expected 4 columns")));
            }
            let element: Element = fields[0].parse()?;
            let mut r = [None; 3];
            for (k, f) in fields[1..].iter().enumerate() {
                if *f != "-" {
                    r[k] = Some(
                        f.parse::<f64>()
                            .map_err(|_| Error::Table(format!("line {line}: bad radius `{f}`")))?,
                    );
                }
            }
            if r[0].is_none() {
                return Err(Error::Table(format!(
                    "line {line}: {element} lacks a single-bond radius"
                )));
            }
            radii.insert(element, r);
        }
        Ok(BondLengthTable { radii })
    }

    /// Reference length of an `order` bond between `a` and `b`.
    pub fn length(&self, a: Element, b: Element, order: u8) -> Result<f64> {
        let k = match order {
            1..=3 => (order - 1) as usize,
            _ => return Err(Error::Table(format!("bond order {order} has no reference length"))),
        };
        let ra = self.radii.get(&a).and_then(|r| r[k]);
        let rb = self.radii.get(&b).and_then(|r| r[k]);
        match (ra, rb) {
            (Some(x), Some(y)) => Ok(x + y),
            _ => Err(Error::Table(format!("no order-{order} length for {a}-{b}"))),
        }
    }

    pub fn single(&self, a: Element, b: Element) -> Result<f64> {
        self.length(a, b, 1)
    }
}

impl Default for BondLengthTable {
    fn default() -> Self {
        BondLengthTable::parse_radii(RADII).expect("bundled radius table")
    }
}
