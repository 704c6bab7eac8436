//! Shared benchmark inputs.

use std::path::PathBuf;

use s2g_core::chem::{parse_xyz, Geometry};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// A geometry from the `molecules` fixture set, e.g. `"toluene"`.
pub fn molecule(name: &str) -> Geometry {
    let path = fixtures().join("molecules/xyz").join(format!("{name}.xyz"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_xyz(&text).expect("fixture parses")
}

/// Molecules spanning small to ring systems.
pub const SET: [&str; 4] = ["methanol", "ethyl_formate", "toluene", "anisole"];
