//! Pattern AST, parser and normalising writer.
//!
//! Supported grammar: organic-subset and aromatic atom symbols, `*`, bracket
//! atoms with `#n`, `X<n>`, `H<n>`, element symbols, `!`, `&` (or adjacency),
//! `,`, `;` and one level of `$(...)`; bonds `-`, `=`, `#`, `:`, `~`;
//! branches and ring closures `1`–`9`.

use std::fmt::Write as _;

use crate::chem::Element;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AtomExpr {
    /// `*`
    Any,
    /// Element symbol; `aromatic` is `Some` for symbol forms (upper case =
    /// aliphatic, lower case = aromatic) and `None` for `#n`.
    Element {
        z: u8,
        aromatic: Option<bool>,
    },
    /// `X<n>`: total number of neighbours, hydrogens included.
    Connections(u8),
    /// `H<n>`: number of attached hydrogen atoms.
    HCount(u8),
    /// `$(...)`: the atom is the first atom of an embedding of the inner pattern.
    Recursive(Box<Pattern>),
    Not(Box<AtomExpr>),
    /// High-precedence conjunction (`&` or juxtaposition).
    And(Vec<AtomExpr>),
    Or(Vec<AtomExpr>),
    /// Low-precedence conjunction (`;`).
    LowAnd(Vec<AtomExpr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BondExpr {
    Single,
    Double,
    Triple,
    Aromatic,
    Any,
    /// No bond symbol written: single or aromatic.
    Implicit,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternBond {
    pub a: usize,
    pub b: usize,
    pub expr: BondExpr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    pub atoms: Vec<AtomExpr>,
    pub bonds: Vec<PatternBond>,
}

impl Pattern {
    /// `(neighbour, bond index)` pairs of pattern atom `a`.
    pub fn neighbors(&self, a: usize) -> Vec<(usize, usize)> {
        self.bonds
            .iter()
            .enumerate()
            .filter_map(|(k, b)| {
                if b.a == a {
                    Some((b.b, k))
                } else if b.b == a {
                    Some((b.a, k))
                } else {
                    None
                }
            })
            .collect()
    }
}

fn perr(offset: usize, msg: impl Into<String>) -> Error {
    Error::Pattern {
        offset,
        msg: msg.into(),
    }
}

fn unsupported(offset: usize, what: &str) -> Error {
    perr(offset, format!("unsupported construct: {what}"))
}

const TWO_LETTER: [&str; 5] = ["Cl", "Br", "Si", "Se", "As"];
const ORGANIC: [&str; 7] = ["B", "C", "N", "O", "P", "S", "F"];
const AROMATIC: [&str; 6] = ["b", "c", "n", "o", "p", "s"];
const AROMATIC_BRACKET: [&str; 2] = ["se", "as"];

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    base: usize,
    depth: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn at(&self) -> usize {
        self.base + self.pos
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn number(&mut self) -> Option<u8> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        (self.pos > start).then(|| self.src[start..self.pos].parse().unwrap_or(u8::MAX))
    }

    fn element_symbol(&mut self, bracket: bool) -> Option<AtomExpr> {
        let rest = self.rest();
        let mut found: Option<(&str, bool)> = None;
        if bracket {
            for s in TWO_LETTER {
                if rest.starts_with(s) {
                    found = Some((s, false));
                }
            }
            for s in AROMATIC_BRACKET {
                if rest.starts_with(s) {
                    found = Some((s, true));
                }
            }
        } else {
            for s in ["Cl", "Br"] {
                if rest.starts_with(s) {
                    found = Some((s, false));
                }
            }
        }
        if found.is_none() {
            let first = &rest[..rest.len().min(1)];
            if ORGANIC.contains(&first) {
                found = Some((first, false));
            } else if AROMATIC.contains(&first) {
                found = Some((first, true));
            }
        }
        let (sym, aromatic) = found?;
        let mut canonical = sym.to_string();
        if aromatic {
            canonical[..1].make_ascii_uppercase();
        }
        let e: Element = canonical.parse().ok()?;
        self.pos += sym.len();
        Some(AtomExpr::Element {
            z: e.atomic_number(),
            aromatic: Some(aromatic),
        })
    }

    fn parse_pattern(&mut self) -> Result<Pattern> {
        let mut atoms: Vec<AtomExpr> = Vec::new();
        let mut bonds: Vec<PatternBond> = Vec::new();
        let mut prev: Option<usize> = None;
        let mut stack: Vec<Option<usize>> = Vec::new();
        let mut pending: Option<(BondExpr, usize)> = None;
        let mut rings: [Option<(usize, BondExpr, usize)>; 10] = [None; 10];
        let start = self.at();

        while let Some(c) = self.peek() {
            let offset = self.at();
            match c {
                b')' if self.depth > 0 && stack.is_empty() => break,
                b'(' => {
                    if prev.is_none() || pending.is_some() {
                        return Err(perr(offset, "branch must follow an atom"));
                    }
                    stack.push(prev);
                    self.pos += 1;
                }
                b')' => {
                    if pending.is_some() {
                        return Err(perr(offset, "dangling bond before `)`"));
                    }
                    prev = stack.pop().ok_or_else(|| perr(offset, "unbalanced `)`"))?;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'~' => {
                    if prev.is_none() || pending.is_some() {
                        return Err(perr(offset, "bond without a preceding atom"));
                    }
                    let e = match c {
                        b'-' => BondExpr::Single,
                        b'=' => BondExpr::Double,
                        b'#' => BondExpr::Triple,
                        b':' => BondExpr::Aromatic,
                        _ => BondExpr::Any,
                    };
                    pending = Some((e, offset));
                    self.pos += 1;
                }
                b'1'..=b'9' => {
                    let Some(p) = prev else {
                        return Err(perr(offset, "ring closure without an atom"));
                    };
                    let d = (c - b'0') as usize;
                    self.pos += 1;
                    let expr = pending.take().map(|(e, _)| e);
                    match rings[d].take() {
                        None => rings[d] = Some((p, expr.unwrap_or(BondExpr::Implicit), offset)),
                        Some((q, open_expr, _)) => {
                            if q == p {
                                return Err(perr(offset, "ring closure onto the same atom"));
                            }
                            let e = match (open_expr, expr) {
                                (BondExpr::Implicit, None) => BondExpr::Implicit,
                                (BondExpr::Implicit, Some(e)) => e,
                                (e, None) => e,
                                (a, Some(b)) if a == b => a,
                                _ => return Err(perr(offset, "conflicting ring-closure bonds")),
                            };
                            add_bond(&mut bonds, q, p, e, offset)?;
                        }
                    }
                }
                b'0' => return Err(unsupported(offset, "ring closure 0")),
                b'%' => return Err(unsupported(offset, "ring closure above 9")),
                b'.' => return Err(unsupported(offset, "disconnected component `.`")),
                b'/' | b'\\' => return Err(unsupported(offset, "directional bond")),
                b'@' => return Err(unsupported(offset, "chirality")),
                _ => {
                    let atom = if c == b'[' {
                        self.pos += 1;
                        let a = self.bracket_atom()?;
                        if self.peek() != Some(b']') {
                            return Err(perr(self.at(), "expected `]`"));
                        }
                        self.pos += 1;
                        a
                    } else if c == b'*' {
                        self.pos += 1;
                        AtomExpr::Any
                    } else if let Some(a) = self.element_symbol(false) {
                        a
                    } else {
                        let ch = self.rest().chars().next().unwrap_or('?');
                        return Err(unsupported(offset, &format!("`{ch}`")));
                    };
                    let idx = atoms.len();
                    atoms.push(atom);
                    if let Some(p) = prev {
                        let e = pending.take().map_or(BondExpr::Implicit, |(e, _)| e);
                        add_bond(&mut bonds, p, idx, e, offset)?;
                    } else if let Some((_, o)) = pending {
                        return Err(perr(o, "bond without a preceding atom"));
                    }
                    prev = Some(idx);
                }
            }
        }
        if let Some((_, o)) = pending {
            return Err(perr(o, "dangling bond at end of pattern"));
        }
        if !stack.is_empty() {
            return Err(perr(self.at(), "unclosed branch"));
        }
        if let Some((_, _, o)) = rings.iter().flatten().next() {
            return Err(perr(*o, "unclosed ring"));
        }
        if atoms.is_empty() {
            return Err(perr(start, "empty pattern"));
        }
        Ok(Pattern { atoms, bonds })
    }

    fn bracket_atom(&mut self) -> Result<AtomExpr> {
        // A bracket holding only `H` is a hydrogen atom rather than an H count.
        if self.rest().starts_with("H]") {
            self.pos += 1;
            return Ok(AtomExpr::Element {
                z: 1,
                aromatic: Some(false),
            });
        }
        self.low_and()
    }

    fn low_and(&mut self) -> Result<AtomExpr> {
        let mut parts = vec![self.or()?];
        while self.peek() == Some(b';') {
            self.pos += 1;
            parts.push(self.or()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            AtomExpr::LowAnd(parts)
        })
    }

    fn or(&mut self) -> Result<AtomExpr> {
        let mut parts = vec![self.and()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            parts.push(self.and()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            AtomExpr::Or(parts)
        })
    }

    fn and(&mut self) -> Result<AtomExpr> {
        let mut parts = vec![self.unary()?];
        loop {
            match self.peek() {
                Some(b'&') => {
                    self.pos += 1;
                    parts.push(self.unary()?);
                }
                Some(b';') | Some(b',') | Some(b']') | None => break,
                _ => parts.push(self.unary()?),
            }
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            AtomExpr::And(parts)
        })
    }

    fn unary(&mut self) -> Result<AtomExpr> {
        if self.peek() == Some(b'!') {
            self.pos += 1;
            return Ok(AtomExpr::Not(Box::new(self.unary()?)));
        }
        self.primitive()
    }

    fn primitive(&mut self) -> Result<AtomExpr> {
        let offset = self.at();
        let Some(c) = self.peek() else {
            return Err(perr(offset, "unexpected end inside brackets"));
        };
        match c {
            b'*' => {
                self.pos += 1;
                Ok(AtomExpr::Any)
            }
            b'#' => {
                self.pos += 1;
                let n = self
                    .number()
                    .ok_or_else(|| perr(self.at(), "expected atomic number after `#`"))?;
                if Element::from_atomic_number(n).is_none() {
                    return Err(perr(offset, format!("unsupported atomic number {n}")));
                }
                Ok(AtomExpr::Element { z: n, aromatic: None })
            }
            b'X' => {
                self.pos += 1;
                Ok(AtomExpr::Connections(self.number().unwrap_or(1)))
            }
            b'H' => {
                self.pos += 1;
                Ok(AtomExpr::HCount(self.number().unwrap_or(1)))
            }
            b'$' => {
                if self.depth > 0 {
                    return Err(unsupported(offset, "nested recursive environment"));
                }
                self.pos += 1;
                if self.peek() != Some(b'(') {
                    return Err(perr(self.at(), "expected `(` after `$`"));
                }
                self.pos += 1;
                let inner_start = self.pos;
                let mut inner = Parser {
                    src: &self.src[inner_start..],
                    bytes: &self.bytes[inner_start..],
                    pos: 0,
                    base: self.base + inner_start,
                    depth: self.depth + 1,
                };
                let p = inner.parse_pattern()?;
                self.pos = inner_start + inner.pos;
                if self.peek() != Some(b')') {
                    return Err(perr(self.at(), "expected `)` closing `$(`"));
                }
                self.pos += 1;
                Ok(AtomExpr::Recursive(Box::new(p)))
            }
            b'+' | b'-' => Err(unsupported(offset, "charge")),
            b'@' => Err(unsupported(offset, "chirality")),
            b'0'..=b'9' => Err(unsupported(offset, "isotope")),
            _ => {
                if let Some(e) = self.element_symbol(true) {
                    return Ok(e);
                }
                let ch = self.rest().chars().next().unwrap_or('?');
                Err(unsupported(offset, &format!("atom primitive `{ch}`")))
            }
        }
    }
}

fn add_bond(bonds: &mut Vec<PatternBond>, a: usize, b: usize, expr: BondExpr, offset: usize) -> Result<()> {
    if bonds.iter().any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a)) {
        return Err(perr(offset, "duplicate bond between the same atoms"));
    }
    bonds.push(PatternBond { a, b, expr });
    Ok(())
}

/// Parses the supported subset into a [`Pattern`].
pub fn parse_pattern(text: &str) -> Result<Pattern> {
    let mut p = Parser {
        src: text,
        bytes: text.as_bytes(),
        pos: 0,
        base: 0,
        depth: 0,
    };
    let pattern = p.parse_pattern()?;
    if p.pos != text.len() {
        return Err(perr(p.pos, "unexpected `)`"));
    }
    Ok(pattern)
}

fn element_text(z: u8, aromatic: Option<bool>) -> String {
    let sym = Element::from_atomic_number(z).map_or("?", |e| e.symbol());
    match aromatic {
        None => format!("#{z}"),
        Some(false) if z == 1 => "#1".to_string(),
        Some(false) => sym.to_string(),
        Some(true) => sym.to_ascii_lowercase(),
    }
}

fn write_expr(e: &AtomExpr, out: &mut String) {
    match e {
        AtomExpr::Any => out.push('*'),
        AtomExpr::Element { z, aromatic } => out.push_str(&element_text(*z, *aromatic)),
        AtomExpr::Connections(n) => {
            let _ = write!(out, "X{n}");
        }
        AtomExpr::HCount(n) => {
            let _ = write!(out, "H{n}");
        }
        AtomExpr::Recursive(p) => {
            out.push_str("$(");
            out.push_str(&write_pattern(p));
            out.push(')');
        }
        AtomExpr::Not(inner) => {
            // The grammar only negates primitives, so no grouping is needed.
            out.push('!');
            write_expr(inner, out);
        }
        AtomExpr::And(parts) => write_joined(parts, "&", out, |p| matches!(p, AtomExpr::Or(_) | AtomExpr::LowAnd(_))),
        AtomExpr::Or(parts) => write_joined(parts, ",", out, |p| matches!(p, AtomExpr::LowAnd(_))),
        AtomExpr::LowAnd(parts) => write_joined(parts, ";", out, |_| false),
    }
}

fn write_joined(parts: &[AtomExpr], sep: &str, out: &mut String, bad: impl Fn(&AtomExpr) -> bool) {
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            out.push_str(sep);
        }
        debug_assert!(!bad(p), "operator precedence violated in pattern AST");
        write_expr(p, out);
    }
}

fn write_atom(e: &AtomExpr) -> String {
    match e {
        AtomExpr::Any => "*".into(),
        AtomExpr::Element { z, aromatic: Some(a) } if *z != 1 => {
            let t = element_text(*z, Some(*a));
            let organic = ORGANIC.contains(&t.as_str()) || AROMATIC.contains(&t.as_str()) || t == "Cl" || t == "Br";
            if organic {
                t
            } else {
                format!("[{t}]")
            }
        }
        AtomExpr::Element {
            z: 1,
            aromatic: Some(false),
        } => "[H]".into(),
        other => {
            let mut s = String::from("[");
            write_expr(other, &mut s);
            s.push(']');
            s
        }
    }
}

fn bond_text(e: BondExpr) -> &'static str {
    match e {
        BondExpr::Single => "-",
        BondExpr::Double => "=",
        BondExpr::Triple => "#",
        BondExpr::Aromatic => ":",
        BondExpr::Any => "~",
        BondExpr::Implicit => "",
    }
}

/// Normalised text: depth-first from atom 0, neighbours in index order,
/// explicit counts on `X`/`H`, `&` for conjunctions.
pub fn write_pattern(p: &Pattern) -> String {
    let n = p.atoms.len();
    let mut visited = vec![false; n];
    let mut tree = vec![false; p.bonds.len()];
    // First pass: spanning-tree edges.
    fn dfs(p: &Pattern, a: usize, visited: &mut [bool], tree: &mut [bool]) {
        visited[a] = true;
        let mut nb = p.neighbors(a);
        nb.sort_unstable();
        for (b, k) in nb {
            if !visited[b] {
                tree[k] = true;
                dfs(p, b, visited, tree);
            }
        }
    }
    for s in 0..n {
        if !visited[s] {
            dfs(p, s, &mut visited, &mut tree);
        }
    }
    // Ring-closure digits: assigned when the first endpoint is emitted.
    let mut out = String::new();
    let mut digit_of = vec![None; p.bonds.len()];
    let mut free: Vec<bool> = vec![true; 10];
    let mut emitted = vec![false; n];

    fn emit(
        p: &Pattern,
        a: usize,
        tree: &[bool],
        emitted: &mut [bool],
        digit_of: &mut [Option<usize>],
        free: &mut [bool],
        out: &mut String,
    ) {
        emitted[a] = true;
        out.push_str(&write_atom(&p.atoms[a]));
        let mut nb = p.neighbors(a);
        nb.sort_unstable();
        for &(_, k) in &nb {
            if tree[k] {
                continue;
            }
            match digit_of[k] {
                Some(d) => {
                    out.push_str(bond_text(p.bonds[k].expr));
                    let _ = write!(out, "{d}");
                    free[d] = true;
                }
                None => {
                    let d = (1..10).find(|&d| free[d]).unwrap_or(9);
                    free[d] = false;
                    digit_of[k] = Some(d);
                    let _ = write!(out, "{d}");
                }
            }
        }
        let children: Vec<(usize, usize)> = nb.into_iter().filter(|&(b, k)| tree[k] && !emitted[b]).collect();
        for (i, &(b, k)) in children.iter().enumerate() {
            let last = i + 1 == children.len();
            if !last {
                out.push('(');
            }
            out.push_str(bond_text(p.bonds[k].expr));
            emit(p, b, tree, emitted, digit_of, free, out);
            if !last {
                out.push(')');
            }
        }
    }
    for s in 0..n {
        if !emitted[s] {
            if s > 0 {
                out.push('.');
            }
            emit(p, s, &tree, &mut emitted, &mut digit_of, &mut free, &mut out);
        }
    }
    out
}

/// `write_pattern ∘ parse_pattern`.
pub fn normalize(text: &str) -> Result<String> {
    Ok(write_pattern(&parse_pattern(text)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alkane_pattern_shape() {
        let p = parse_pattern("[CX4;H3,H2,H1]").unwrap();
        assert_eq!(p.atoms.len(), 1);
        assert_eq!(
            p.atoms[0],
            AtomExpr::LowAnd(vec![
                AtomExpr::And(vec![
                    AtomExpr::Element {
                        z: 6,
                        aromatic: Some(false)
                    },
                    AtomExpr::Connections(4)
                ]),
                AtomExpr::Or(vec![AtomExpr::HCount(3), AtomExpr::HCount(2), AtomExpr::HCount(1)]),
            ])
        );
    }

    #[test]
    fn nitrile_and_ring() {
        let p = parse_pattern("[NX1]#[CX2]").unwrap();
        assert_eq!(
            p.bonds,
            vec![PatternBond {
                a: 0,
                b: 1,
                expr: BondExpr::Triple
            }]
        );
        let r = parse_pattern("C1CC1").unwrap();
        assert_eq!(r.atoms.len(), 3);
        assert_eq!(r.bonds.len(), 3);
        assert!(r.bonds.iter().all(|b| b.expr == BondExpr::Implicit));
    }

    #[test]
    fn h_in_brackets() {
        let p = parse_pattern("[#6,H][CX3H1](=O)").unwrap();
        assert_eq!(
            p.atoms[0],
            AtomExpr::Or(vec![AtomExpr::Element { z: 6, aromatic: None }, AtomExpr::HCount(1)])
        );
        let h = parse_pattern("[H]C").unwrap();
        assert_eq!(
            h.atoms[0],
            AtomExpr::Element {
                z: 1,
                aromatic: Some(false)
            }
        );
        assert_eq!(write_pattern(&h), "[H]C");
    }

    #[test]
    fn recursive_pattern() {
        let p = parse_pattern("[OX2H;!$(OC=O)]").unwrap();
        let AtomExpr::LowAnd(parts) = &p.atoms[0] else { panic!() };
        let AtomExpr::Not(inner) = &parts[1] else { panic!() };
        let AtomExpr::Recursive(r) = &**inner else { panic!() };
        assert_eq!(r.atoms.len(), 3);
        assert_eq!(r.bonds[1].expr, BondExpr::Double);
    }

    #[test]
    fn errors_name_construct_and_offset() {
        let cases = [
            ("C[N+]", 3, "charge"),
            ("CC.C", 2, "component"),
            ("C%10CC%10", 1, "above 9"),
            ("[C@H]", 2, "chirality"),
            ("[$(C[$(N)])]", 5, "nested"),
            ("C[Zz]", 2, "`Z`"),
            ("C1CC", 1, "unclosed ring"),
            ("C(C", 3, "unclosed branch"),
        ];
        for (text, offset, needle) in cases {
            match parse_pattern(text) {
                Err(Error::Pattern { offset: o, msg }) => {
                    assert_eq!(o, offset, "{text}: {msg}");
                    assert!(msg.contains(needle), "{text}: {msg}");
                }
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize("[CX4;H3,H2,H1]").unwrap(), "[C&X4;H3,H2,H1]");
        assert_eq!(normalize("[OX2H]").unwrap(), "[O&X2&H1]");
        assert_eq!(normalize("C1OC1").unwrap(), "C1OC1");
        assert_eq!(normalize("[#6][CX3](=O)[#6]").unwrap(), "[#6][C&X3](=O)[#6]");
        assert_eq!(normalize("[Cl]C").unwrap(), "ClC");
        assert_eq!(normalize("[Si]").unwrap(), "[Si]");
    }
}
