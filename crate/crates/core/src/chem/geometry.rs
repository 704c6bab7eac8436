use std::fmt::Write as _;

use crate::chem::Element;
use crate::error::{Error, Result};

/// Atom types plus Cartesian coordinates in Ångström.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub elements: Vec<Element>,
    pub coords: Vec<[f64; 3]>,
}

impl Geometry {
    pub fn new(elements: Vec<Element>, coords: Vec<[f64; 3]>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Degenerate("geometry without atoms".into()));
        }
        if elements.len() != coords.len() {
            return Err(Error::dim(format!(
                "{} elements but {} positions",
                elements.len(),
                coords.len()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite coordinate".into()));
        }
        Ok(Geometry { elements, coords })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Distance between atoms `i` and `j` in Å.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.coords[i], self.coords[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    pub fn centroid(&self) -> [f64; 3] {
        let n = self.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.coords {
            for k in 0..3 {
                c[k] += p[k] / n;
            }
        }
        c
    }

    /// Applies `x ↦ R·x + t`.
    pub fn transformed(&self, rotation: &[[f64; 3]; 3], translation: [f64; 3]) -> Geometry {
        let coords = self
            .coords
            .iter()
            .map(|p| {
                let mut q = translation;
                for (r, row) in rotation.iter().enumerate() {
                    q[r] += row[0] * p[0] + row[1] * p[1] + row[2] * p[2];
                }
                q
            })
            .collect();
        Geometry {
            elements: self.elements.clone(),
            coords,
        }
    }

    /// Reorders atoms so that new atom `k` is old atom `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Geometry {
        Geometry {
            elements: order.iter().map(|&i| self.elements[i]).collect(),
            coords: order.iter().map(|&i| self.coords[i]).collect(),
        }
    }

    /// Hill-order molecular formula (`C`, `H`, then alphabetical).
    pub fn formula(&self) -> String {
        hill_formula(&self.elements)
    }

    pub fn to_xyz(&self, comment: &str) -> String {
        let mut s = format!("{}\n{}\n", self.len(), comment.replace('\n', " "));
        for (e, p) in self.elements.iter().zip(&self.coords) {
            let _ = writeln!(s, "{:<2} {:>14.8} {:>14.8} {:>14.8}", e.symbol(), p[0], p[1], p[2]);
        }
        s
    }
}

pub fn hill_formula(elements: &[Element]) -> String {
    let mut counts = std::collections::BTreeMap::<&str, usize>::new();
    for e in elements {
        *counts.entry(e.symbol()).or_default() += 1;
    }
    let mut out = String::new();
    let mut emit = |sym: &str, n: usize| {
        out.push_str(sym);
        if n > 1 {
            out.push_str(&n.to_string());
        }
    };
    let has_c = counts.contains_key("C");
    if has_c {
        emit("C", counts.remove("C").unwrap_or(0));
        if let Some(h) = counts.remove("H") {
            emit("H", h);
        }
    }
    for (sym, n) in counts {
        emit(sym, n);
    }
    out
}

/// Parses a single-frame XYZ block. Columns after `x y z` are ignored.
pub fn parse_xyz(text: &str) -> Result<Geometry> {
    let mut lines = text.lines().enumerate();
    let (_, count_line) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty input".into(),
    })?;
    let count: usize = count_line.trim().parse().map_err(|_| Error::Parse {
        line: 1,
        msg: format!("atom count `{}` is not a non-negative integer", count_line.trim()),
    })?;
    if count == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "atom count must be at least 1".into(),
        });
    }
    if lines.next().is_none() {
        return Err(Error::Parse {
            line: 2,
            msg: "missing comment line".into(),
        });
    }
    let mut elements = Vec::with_capacity(count);
    let mut coords = Vec::with_capacity(count);
    let mut last_line = 2;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if elements.len() == count {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("more atom lines than the declared {count}"),
            });
        }
        let mut fields = trimmed.split_whitespace();
        let sym = fields.next().unwrap_or_default();
        let element: Element = sym.parse().map_err(|_| Error::UnknownElement {
            symbol: sym.to_string(),
            line: Some(lineno),
        })?;
        let mut p = [0.0; 3];
        for (k, v) in p.iter_mut().enumerate() {
            let field = fields.next().ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("missing coordinate {}", ["x", "y", "z"][k]),
            })?;
            *v = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: lineno,
                    msg: format!("malformed number `{field}`"),
                })?;
        }
        elements.push(element);
        coords.push(p);
        last_line = lineno;
    }
    if elements.len() != count {
        return Err(Error::Parse {
            line: last_line,
            msg: format!("declared {count} atoms but found {}", elements.len()),
        });
    }
    Geometry::new(elements, coords)
}
