//! Transmitted-light RGB <-> optical density, and the Beer-Lambert forward model.
//!
//! Optical density uses base-10 logarithms: `od = -log10(I / I0)` where `I0` is the
//! per-channel background (incident) intensity. Zero intensity is clamped to half a
//! quantization step so every 8-bit value maps to a finite density.

use image::{Rgb, RgbImage};

use crate::concentration::ConcentrationMap;
use crate::error::{Error, Result};
use crate::stain::StainMatrix;

/// Smallest transmitted intensity considered before taking the logarithm.
pub const MIN_INTENSITY: f64 = 0.5;

/// Largest representable optical density: `-log10(0.5 / 255)`.
pub const OD_MAX: f64 = 2.707_570_176_097_936_3;

pub const WHITE: [f64; 3] = [255.0; 3];

/// Per-pixel optical density, interleaved RGB, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OdImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl OdImage {
    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize * 3],
        }
    }

    /// Wraps raw interleaved data, clamping every value into `[0, OD_MAX]`.
    pub fn from_raw(width: u32, height: u32, mut data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("OD image must be at least 1x1"));
        }
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::invalid(format!(
                "OD buffer has {} values, expected {}",
                data.len(),
                width as usize * height as usize * 3
            )));
        }
        for v in &mut data {
            if v.is_nan() {
                return Err(Error::invalid("OD image contains NaN"));
            }
            *v = v.clamp(0.0, OD_MAX);
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f64; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

fn check_background(background: [f64; 3]) -> Result<()> {
    if background.iter().any(|b| !(*b > 0.0 && *b <= 255.0)) {
        return Err(Error::invalid(format!(
            "background intensities must lie in (0, 255], got {background:?}"
        )));
    }
    Ok(())
}

#[inline]
fn intensity_to_od(value: u8, background: f64) -> f64 {
    let i = f64::from(value).clamp(MIN_INTENSITY, 255.0);
    (-(i / background).log10()).clamp(0.0, OD_MAX)
}

#[inline]
fn od_to_intensity(od: f64, background: f64) -> u8 {
    (background * 10f64.powf(-od)).round().clamp(0.0, 255.0) as u8
}

pub fn rgb_to_od(img: &RgbImage, background: [f64; 3]) -> Result<OdImage> {
    check_background(background)?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::invalid("RGB image must be at least 1x1"));
    }
    let data = img
        .as_raw()
        .chunks_exact(3)
        .flat_map(|p| (0..3).map(move |c| intensity_to_od(p[c], background[c])))
        .collect();
    Ok(OdImage {
        width: img.width(),
        height: img.height(),
        data,
    })
}

pub fn od_to_rgb(od: &OdImage, background: [f64; 3]) -> Result<RgbImage> {
    check_background(background)?;
    let raw = od
        .data
        .chunks_exact(3)
        .flat_map(|p| (0..3).map(move |c| od_to_intensity(p[c], background[c])))
        .collect();
    Ok(RgbImage::from_raw(od.width, od.height, raw).expect("buffer size matches dimensions"))
}

/// Linear mixture of stain vectors in OD space, clamped to `[0, OD_MAX]`.
pub fn compose_od(conc: &ConcentrationMap, stains: &StainMatrix) -> Result<OdImage> {
    if conc.plane_count() != stains.len() {
        return Err(Error::invalid(format!(
            "concentration map has {} planes but stain matrix has {} rows",
            conc.plane_count(),
            stains.len()
        )));
    }
    if conc.stains() != stains.names().as_slice() {
        return Err(Error::invalid(format!(
            "concentration planes {:?} do not match stain rows {:?}",
            conc.stains(),
            stains.names()
        )));
    }
    let n = conc.pixel_count();
    let mut data = vec![0.0; n * 3];
    for (plane, row) in conc.planes().iter().zip(stains.rows()) {
        for (px, &c) in data.chunks_exact_mut(3).zip(plane) {
            if c != 0.0 {
                px[0] += c * row.od[0];
                px[1] += c * row.od[1];
                px[2] += c * row.od[2];
            }
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, OD_MAX);
    }
    Ok(OdImage {
        width: conc.width(),
        height: conc.height(),
        data,
    })
}

/// Beer-Lambert forward model: concentrations to a transmitted-light image.
pub fn compose(conc: &ConcentrationMap, stains: &StainMatrix, background: [f64; 3]) -> Result<RgbImage> {
    od_to_rgb(&compose_od(conc, stains)?, background)
}

/// Per-pixel OD of a single 8-bit pixel against a white background.
pub fn pixel_od(p: &Rgb<u8>) -> [f64; 3] {
    [
        intensity_to_od(p[0], 255.0),
        intensity_to_od(p[1], 255.0),
        intensity_to_od(p[2], 255.0),
    ]
}
