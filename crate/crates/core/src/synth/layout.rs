use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Field-of-view generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FovSpec {
    pub width: u32,
    pub height: u32,
    /// Cells per megapixel.
    pub cell_density: f64,
    /// Probability that each marker (m1, m2, m3) is expressed on a given cell.
    pub colocalization_probs: [f64; 3],
    pub seed: u64,
    /// Standard deviation of additive Gaussian noise in OD units.
    pub noise_sigma: f64,
    /// Range of nucleus radii in pixels.
    pub nucleus_radius: (f64, f64),
    /// Range of the gap between nucleus edge and membrane centerline.
    pub membrane_gap: (f64, f64),
    pub membrane_thickness: (f64, f64),
}

impl Default for FovSpec {
    fn default() -> Self {
        Self {
            width: 1586,
            height: 1540,
            cell_density: 1200.0,
            colocalization_probs: [0.6, 0.6, 0.6],
            seed: 0,
            noise_sigma: 0.02,
            nucleus_radius: (4.0, 7.0),
            membrane_gap: (3.0, 6.0),
            membrane_thickness: (1.5, 3.0),
        }
    }
}

impl FovSpec {
    /// 512 x 512 field of view for quick runs; everything else as the default.
    pub fn desk() -> Self {
        Self {
            width: 512,
            height: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("FOV dimensions must be positive"));
        }
        if !(self.cell_density >= 0.0 && self.cell_density.is_finite()) {
            return Err(Error::invalid("cell density must be finite and nonnegative"));
        }
        if self.colocalization_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("co-localization probabilities must lie in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be nonnegative"));
        }
        for (name, (lo, hi)) in [
            ("nucleus_radius", self.nucleus_radius),
            ("membrane_gap", self.membrane_gap),
            ("membrane_thickness", self.membrane_thickness),
        ] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::invalid(format!("{name} range must satisfy 0 < lo <= hi")));
            }
        }
        Ok(())
    }

    pub fn expected_cell_count(&self) -> usize {
        (self.cell_density * f64::from(self.width) * f64::from(self.height) / 1e6).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub center: (f64, f64),
    pub nucleus_radius: f64,
    /// Radius of the membrane centerline.
    pub membrane_radius: f64,
    pub membrane_thickness: f64,
    /// Expression of markers m1, m2, m3 in [0, 1]; zero means not expressed.
    pub expression: [f64; 3],
    pub hematoxylin_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLayout {
    pub width: u32,
    pub height: u32,
    pub cells: Vec<Cell>,
}

impl CellLayout {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            cells: Vec::new(),
        }
    }
}

/// Expression level of an expressed marker is drawn from this range.
const EXPRESSION_RANGE: (f64, f64) = (0.35, 1.0);
const HEMATOXYLIN_RANGE: (f64, f64) = (0.5, 1.0);

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Scatter cells uniformly over the field; markers are expressed independently.
pub fn generate_layout(spec: &FovSpec) -> Result<CellLayout> {
    spec.validate()?;
    let mut rng = seed::stream(spec.seed, "layout", 0);
    let n = spec.expected_cell_count();
    let mut cells = Vec::with_capacity(n);
    for _ in 0..n {
        let center = (
            rng.random_range(0.0..f64::from(spec.width)),
            rng.random_range(0.0..f64::from(spec.height)),
        );
        let nucleus_radius = uniform(&mut rng, spec.nucleus_radius);
        let membrane_radius = nucleus_radius + uniform(&mut rng, spec.membrane_gap);
        let membrane_thickness = uniform(&mut rng, spec.membrane_thickness);
        let mut expression = [0.0; 3];
        for (e, &p) in expression.iter_mut().zip(&spec.colocalization_probs) {
            // always draw both numbers so streams stay aligned across probabilities
            let expressed = rng.random::<f64>() < p;
            let level = uniform(&mut rng, EXPRESSION_RANGE);
            if expressed {
                *e = level;
            }
        }
        let hematoxylin_level = uniform(&mut rng, HEMATOXYLIN_RANGE);
        cells.push(Cell {
            center,
            nucleus_radius,
            membrane_radius,
            membrane_thickness,
            expression,
            hematoxylin_level,
        });
    }
    Ok(CellLayout {
        width: spec.width,
        height: spec.height,
        cells,
    })
}
