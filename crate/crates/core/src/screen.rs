//! Geometry screening: does bond perception on the coordinates reproduce the
//! recorded molecular graph?

use crate::canon::{canonical_key, CanonicalKey};
use crate::chem::{Geometry, MolecularGraph, Perceiver, PerceptionOptions};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScreenRow {
    pub id: String,
    pub consistent: bool,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScreenReport {
    pub rows: Vec<ScreenRow>,
}

impl ScreenReport {
    pub fn consistent(&self) -> usize {
        self.rows.iter().filter(|r| r.consistent).count()
    }

    pub fn flagged(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| !r.consistent)
            .map(|r| r.id.as_str())
            .collect()
    }

    /// `id,consistent,reason` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,consistent,reason\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{}\n",
                csv_field(&r.id),
                r.consistent,
                csv_field(&r.reason)
            ));
        }
        s
    }
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Outcome of screening one geometry.
pub fn screen_one(
    perceiver: &Perceiver,
    opts: &PerceptionOptions,
    id: &str,
    geometry: &Geometry,
    reference: &CanonicalKey,
) -> (ScreenRow, Option<MolecularGraph>) {
    match perceiver.perceive(geometry, opts) {
        Err(e) => (
            ScreenRow {
                id: id.to_string(),
                consistent: false,
                reason: format!("perception failed: {e}"),
            },
            None,
        ),
        Ok(g) => {
            let key = canonical_key(&g);
            let consistent = &key == reference;
            let reason = match (consistent, g.unresolved) {
                (true, _) => String::new(),
                (false, true) => "perception unresolved; graph differs from reference".into(),
                (false, false) => "perceived graph differs from reference".into(),
            };
            (
                ScreenRow {
                    id: id.to_string(),
                    consistent,
                    reason,
                },
                Some(g),
            )
        }
    }
}

/// Screens `(id, geometry, reference key)` records.
pub fn screen_dataset<'a, I>(records: I, opts: &PerceptionOptions) -> ScreenReport
where
    I: IntoIterator<Item = (&'a str, &'a Geometry, &'a CanonicalKey)>,
{
    let perceiver = Perceiver::default();
    ScreenReport {
        rows: records
            .into_iter()
            .map(|(id, g, k)| screen_one(&perceiver, opts, id, g, k).0)
            .collect(),
    }
}
