//! Spectral attention maps of the denoiser injection modules, exported as
//! CSV and as an SVG overlay on the spectrum.

use std::fmt::Write as _;

use crate::autodiff::Tape;
use crate::chem::Element;
use crate::encoder::DIGIT_BASE;
use crate::error::{Error, Result};
use crate::pipeline::model::{Model, Prepared};
use crate::spectra::Spectrum;
use crate::tensor::Tensor;

/// One injection layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMaps {
    /// Per spectral position, the largest weight any edge puts on it.
    pub edge_max: Vec<f64>,
    /// Atoms × positions, each column rescaled to sum to one over atoms.
    pub atoms: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps {
    pub labels: Vec<String>,
    /// Wavenumber range of each spectral patch.
    pub patches: Vec<(f64, f64)>,
    pub elements: Vec<Element>,
    pub layers: Vec<LayerMaps>,
}

fn labels(model: &Model, p: &Prepared, spectrum: &Spectrum) -> (Vec<String>, Vec<(f64, f64)>) {
    let size = model.config.encoder.patch;
    let grid = spectrum.grid;
    let patches: Vec<(f64, f64)> = (0..model.config.encoder.patches())
        .map(|k| (grid.point(k * size), grid.point((k + 1) * size - 1)))
        .collect();
    let mut labels: Vec<String> = patches.iter().map(|(a, b)| format!("patch {a:.1}-{b:.1}")).collect();
    for &t in &p.formula {
        let tok = if t >= DIGIT_BASE {
            (t - DIGIT_BASE).to_string()
        } else {
            Element::ALL[t].symbol().to_string()
        };
        labels.push(format!("token {tok}"));
    }
    (labels, patches)
}

/// Runs the denoiser at `t = 1` on the encoder mean of the reference
/// geometry, the point where the latent is closest to a clean molecule.
pub fn attention_maps(model: &Model, p: &Prepared, spectrum: &Spectrum) -> Result<AttentionMaps> {
    let mut tape = Tape::new();
    let edges = p.edges();
    let s = model.spectral_features(&mut tape, p)?;
    let zh = model.ae.embed_atoms(&mut tape, &model.params, &p.elements)?;
    let (cond, _) = model.ae.condition(&mut tape, &model.params, zh, s)?;
    let x = tape.leaf(p.coords.clone());
    let enc = model.ae.encode(&mut tape, &model.params, x, cond, &edges, None)?;
    let out = model
        .denoiser
        .forward(&mut tape, &model.params, enc.mean, 1, zh, s, &edges)?;
    let (labels, patches) = labels(model, p, spectrum);
    let width = labels.len();
    let mut layers = Vec::new();
    for (node, edge) in out.node_attention.iter().zip(&out.edge_attention) {
        if node.cols() != width || edge.cols() != width {
            return Err(Error::dim(format!(
                "attention over {} positions, expected {width}",
                node.cols()
            )));
        }
        let edge_max = (0..width)
            .map(|c| (0..edge.rows()).map(|r| edge.get(r, c)).fold(0.0, f64::max))
            .collect();
        let mut atoms = node.clone();
        for c in 0..width {
            let total: f64 = (0..atoms.rows()).map(|r| atoms.get(r, c)).sum();
            if total > 0.0 {
                for r in 0..atoms.rows() {
                    atoms.set(r, c, atoms.get(r, c) / total);
                }
            }
        }
        layers.push(LayerMaps { edge_max, atoms });
    }
    Ok(AttentionMaps {
        labels,
        patches,
        elements: p.elements.clone(),
        layers,
    })
}

impl AttentionMaps {
    /// One row per layer and spectral position.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,position,label,edge_max");
        for (i, e) in self.elements.iter().enumerate() {
            let _ = write!(s, ",atom{i}_{}", e.symbol());
        }
        s.push('\n');
        for (l, layer) in self.layers.iter().enumerate() {
            for (c, label) in self.labels.iter().enumerate() {
                let _ = write!(s, "{l},{c},{label},{:.8}", layer.edge_max[c]);
                for a in 0..layer.atoms.rows() {
                    let _ = write!(s, ",{:.8}", layer.atoms.get(a, c));
                }
                s.push('\n');
            }
        }
        s
    }

    /// Spectrum curve with each layer's edge attention drawn as shaded
    /// bands over the patches.
    pub fn to_svg(&self, spectrum: &Spectrum) -> String {
        let (w, band, plot) = (900.0, 24.0, 240.0);
        let h = plot + band * self.layers.len() as f64 + 40.0;
        let x0 = spectrum.grid.start;
        let x1 = spectrum.grid.point(spectrum.grid.count.saturating_sub(1));
        let sx = |x: f64| 40.0 + (x - x0) / (x1 - x0).max(1e-9) * (w - 60.0);
        let ymax = spectrum.intensities.iter().cloned().fold(0.0, f64::max).max(1e-12);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        for (l, layer) in self.layers.iter().enumerate() {
            let y = plot + 10.0 + band * l as f64;
            let top = layer.edge_max[..self.patches.len()]
                .iter()
                .cloned()
                .fold(0.0, f64::max)
                .max(1e-12);
            for (k, &(a, b)) in self.patches.iter().enumerate() {
                let opacity = layer.edge_max[k] / top;
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="crimson" fill-opacity="{opacity:.3}"/>"#,
                    sx(a),
                    (sx(b) - sx(a)).max(0.5),
                    band - 4.0
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="4" y="{:.2}" font-size="10" font-family="sans-serif">L{l}</text>"#,
                y + band / 2.0
            );
        }
        let mut path = String::new();
        for (i, (x, v)) in spectrum.grid.points().zip(&spectrum.intensities).enumerate() {
            let y = plot - v / ymax * (plot - 20.0);
            let _ = write!(path, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(x), y);
        }
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="black" stroke-width="1"/>"#,
            path.trim_end()
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" font-family="sans-serif" text-anchor="middle">wavenumber / cm-1</text>"#,
            w / 2.0,
            h - 6.0
        );
        s.push_str("</svg>\n");
        s
    }
}
