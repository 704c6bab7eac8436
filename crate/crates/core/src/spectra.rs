//! IR spectra: Lorentzian broadening onto a fixed grid, normalisation,
//! information-divergence similarity and patch extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform wavenumber grid in cm⁻¹.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavenumberGrid {
    pub start: f64,
    pub count: usize,
    pub spacing: f64,
}

impl Default for WavenumberGrid {
    fn default() -> Self {
        WavenumberGrid {
            start: 400.0,
            count: 3200,
            spacing: 1.125,
        }
    }
}

impl WavenumberGrid {
    pub fn point(&self, i: usize) -> f64 {
        self.start + i as f64 * self.spacing
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.point(i))
    }

    /// Index of the grid point closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let k = ((x - self.start) / self.spacing).round();
        k.clamp(0.0, (self.count - 1) as f64) as usize
    }
}

/// Vibrational mode: wavenumber (cm⁻¹) and IR intensity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub wavenumber: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub grid: WavenumberGrid,
    pub intensities: Vec<f64>,
}

pub const HALF_WIDTH: f64 = 15.0;
pub const FREQUENCY_SCALE: f64 = 0.965;
pub const EPSILON: f64 = 1e-10;
pub const FUNCTIONAL_GROUP_REGION: f64 = 1350.0;
pub const PATCH_SIZE: usize = 64;

/// Sum of Lorentzians `(F/2π)·y / ((x − s·xₙ)² + F²/4)` on the grid.
pub fn broaden(modes: &[Mode], grid: &WavenumberGrid, half_width: f64, scale: f64) -> Result<Spectrum> {
    if !(half_width > 0.0) {
        return Err(Error::Usage(format!("half width must be positive, got {half_width}")));
    }
    if let Some(m) = modes.iter().find(|m| !(m.wavenumber > 0.0) || !(m.intensity >= 0.0)) {
        return Err(Error::Usage(format!("invalid mode {m:?}")));
    }
    let f = half_width;
    let pre = f / (2.0 * std::f64::consts::PI);
    let quarter = 0.25 * f * f;
    let intensities = grid
        .points()
        .map(|x| {
            modes
                .iter()
                .map(|m| {
                    let dx = x - scale * m.wavenumber;
                    pre * m.intensity / (dx * dx + quarter)
                })
                .sum()
        })
        .collect();
    Ok(Spectrum {
        grid: *grid,
        intensities,
    })
}

/// Broadening with the default half width and frequency scale.
pub fn broaden_default(modes: &[Mode], grid: &WavenumberGrid) -> Spectrum {
    broaden(modes, grid, HALF_WIDTH, FREQUENCY_SCALE).expect("default width is positive")
}

impl Spectrum {
    pub fn new(grid: WavenumberGrid, intensities: Vec<f64>) -> Result<Self> {
        if intensities.len() != grid.count {
            return Err(Error::GridMismatch(format!(
                "{} intensities for a {}-point grid",
                intensities.len(),
                grid.count
            )));
        }
        if intensities.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Usage("intensities must be finite and non-negative".into()));
        }
        Ok(Spectrum { grid, intensities })
    }

    /// Scales to unit sum.
    pub fn normalized(&self) -> Result<Spectrum> {
        Ok(Spectrum {
            grid: self.grid,
            intensities: unit_sum(&self.intensities)?,
        })
    }

    /// `patch_size`-point slices in ascending wavenumber order.
    pub fn patchify(&self, patch_size: usize) -> Result<Vec<Vec<f64>>> {
        if patch_size == 0 || self.intensities.len() % patch_size != 0 {
            return Err(Error::dim(format!(
                "{} points do not split into patches of {patch_size}",
                self.intensities.len()
            )));
        }
        Ok(self.intensities.chunks(patch_size).map(<[f64]>::to_vec).collect())
    }

    /// Copy restricted to grid points with wavenumber ≥ `from`.
    pub fn window(&self, from: f64) -> Spectrum {
        let first = (0..self.grid.count)
            .find(|&i| self.grid.point(i) >= from)
            .unwrap_or(self.grid.count);
        Spectrum {
            grid: WavenumberGrid {
                start: self.grid.point(first),
                count: self.grid.count - first,
                spacing: self.grid.spacing,
            },
            intensities: self.intensities[first..].to_vec(),
        }
    }
}

fn unit_sum(v: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("spectrum has no positive intensity".into()));
    }
    Ok(v.iter().map(|x| x / total).collect())
}

fn check_grids(a: &Spectrum, b: &Spectrum) -> Result<()> {
    if a.grid != b.grid || a.intensities.len() != b.intensities.len() {
        return Err(Error::GridMismatch(format!(
            "grids {:?} and {:?} differ",
            a.grid, b.grid
        )));
    }
    Ok(())
}

/// Symmetric KL divergence of unit-sum, ε-floored copies of two raw vectors.
pub fn sid_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch(format!("{} vs {} points", a.len(), b.len())));
    }
    let pa = unit_sum(a)?;
    let pb = unit_sum(b)?;
    Ok(pa
        .iter()
        .zip(&pb)
        .map(|(&x, &y)| {
            let (x, y) = (x.max(EPSILON), y.max(EPSILON));
            x * (x / y).ln() + y * (y / x).ln()
        })
        .sum())
}

/// Spectral information divergence.
pub fn sid(a: &Spectrum, b: &Spectrum) -> Result<f64> {
    check_grids(a, b)?;
    sid_values(&a.intensities, &b.intensities)
}

/// `1 / (1 + SID)`.
pub fn sis(a: &Spectrum, b: &Spectrum) -> Result<f64> {
    Ok(1.0 / (1.0 + sid(a, b)?))
}

/// SIS over the functional-group region (≥ 1350 cm⁻¹), renormalised there.
pub fn sis_star(a: &Spectrum, b: &Spectrum) -> Result<f64> {
    check_grids(a, b)?;
    sis(&a.window(FUNCTIONAL_GROUP_REGION), &b.window(FUNCTIONAL_GROUP_REGION))
}
