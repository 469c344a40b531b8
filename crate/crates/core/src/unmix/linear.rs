//! Least-squares color deconvolution for up to three stains.

use nalgebra::{DMatrix, Vector3};

use crate::color::OdImage;
use crate::concentration::ConcentrationMap;
use crate::error::{Error, Result};
use crate::stain::{StainMatrix, MAX_CONDITION};

#[derive(Debug, Clone, Copy)]
pub struct LinearOptions {
    /// Replace negative least-squares solutions with zero.
    pub clamp_negative: bool,
    pub max_condition: f64,
}

impl Default for LinearOptions {
    fn default() -> Self {
        Self {
            clamp_negative: true,
            max_condition: MAX_CONDITION,
        }
    }
}

/// Per-pixel solve of `od ~= M^T c` where `M` holds one stain vector per row.
///
/// With three independent rows this is the exact inverse; with fewer rows it is the
/// least-squares projection onto their span.
pub fn deconvolve_linear(od: &OdImage, stains: &StainMatrix, opts: LinearOptions) -> Result<ConcentrationMap> {
    let k = stains.len();
    if k > 3 {
        return Err(Error::UnsupportedStainCount(k));
    }
    let condition = stains.condition_number();
    if !(condition <= opts.max_condition) {
        return Err(Error::IllConditioned {
            condition,
            bound: opts.max_condition,
        });
    }
    // M^T is 3 x k; its pseudo-inverse maps OD to concentrations.
    let mt: DMatrix<f64> = stains.to_matrix().transpose();
    let pinv = mt
        .pseudo_inverse(f64::EPSILON)
        .map_err(|e| Error::invalid(format!("pseudo-inverse failed: {e}")))?;

    let n = od.pixel_count();
    let mut planes = vec![vec![0.0; n]; k];
    for (i, px) in od.pixels().enumerate() {
        let v = Vector3::new(px[0], px[1], px[2]);
        for (s, plane) in planes.iter_mut().enumerate() {
            let c = pinv[(s, 0)] * v[0] + pinv[(s, 1)] * v[1] + pinv[(s, 2)] * v[2];
            plane[i] = if opts.clamp_negative { c.max(0.0) } else { c };
        }
    }
    if opts.clamp_negative {
        ConcentrationMap::from_planes(od.width(), od.height(), stains.names(), planes)
    } else {
        // Unclamped solutions may be slightly negative; keep them as-is for
        // callers checking the exact inverse.
        Ok(ConcentrationMap::from_planes_unchecked(od.width(), od.height(), stains.names(), planes))
    }
}
