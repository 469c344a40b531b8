//! Classical baselines: linear color deconvolution and NMF, plus rendering of a
//! synthetic singleplex from unmixed concentrations.

mod linear;
mod nmf;

pub use linear::{deconvolve_linear, LinearOptions};
pub use nmf::{frobenius_error, nmf_unmix, NmfConfig, NmfResult, BACKGROUND_OD};

use image::RgbImage;

use crate::color::{compose, rgb_to_od};
use crate::concentration::ConcentrationMap;
use crate::error::{Error, Result};
use crate::stain::{Stain, StainMatrix};

/// Render one marker plus the counterstain, zeroing every other plane.
pub fn reconstruct_singleplex(
    conc: &ConcentrationMap,
    stain: Stain,
    counterstain: Stain,
    stains: &StainMatrix,
    background: [f64; 3],
) -> Result<RgbImage> {
    for s in [stain, counterstain] {
        if conc.plane(s).is_none() {
            return Err(Error::invalid(format!("stain {s} is not a plane of the concentration map")));
        }
    }
    compose(&conc.keep_only(&[stain, counterstain]), stains, background)
}

/// Anything that turns a triplex image into a synthetic singleplex for one marker.
pub trait SingleplexSynthesizer {
    fn method(&self) -> &str;
    fn synthesize(&self, triplex: &RgbImage, stain: Stain) -> Result<RgbImage>;

    /// One singleplex per requested marker, in order.
    fn synthesize_all(&self, triplex: &RgbImage, stains: &[Stain]) -> Result<Vec<RgbImage>> {
        stains.iter().map(|s| self.synthesize(triplex, *s)).collect()
    }
}

/// NMF baseline: factor the triplex, then re-render the requested marker with
/// hematoxylin using the learned basis.
#[derive(Debug, Clone, Default)]
pub struct NmfSynthesizer {
    pub config: NmfConfig,
}

impl SingleplexSynthesizer for NmfSynthesizer {
    fn method(&self) -> &str {
        "nmf"
    }

    fn synthesize(&self, triplex: &RgbImage, stain: Stain) -> Result<RgbImage> {
        Ok(self.synthesize_all(triplex, &[stain])?.remove(0))
    }

    fn synthesize_all(&self, triplex: &RgbImage, stains: &[Stain]) -> Result<Vec<RgbImage>> {
        let od = rgb_to_od(triplex, crate::color::WHITE)?;
        let fit = match nmf_unmix(&od, &self.config) {
            Ok(fit) => fit,
            // Nothing stained: the singleplex is blank as well.
            Err(Error::DegenerateInput(_)) => {
                let blank = RgbImage::from_pixel(triplex.width(), triplex.height(), image::Rgb([255; 3]));
                return Ok(vec![blank; stains.len()]);
            }
            Err(e) => return Err(e),
        };
        stains
            .iter()
            .map(|s| reconstruct_singleplex(&fit.conc, *s, Stain::Hematoxylin, &fit.basis, crate::color::WHITE))
            .collect()
    }
}

/// Linear deconvolution with a known matrix of at most three rows.
#[derive(Debug, Clone)]
pub struct LinearSynthesizer {
    pub stains: StainMatrix,
    pub options: LinearOptions,
}

impl SingleplexSynthesizer for LinearSynthesizer {
    fn method(&self) -> &str {
        "linear"
    }

    fn synthesize(&self, triplex: &RgbImage, stain: Stain) -> Result<RgbImage> {
        let od = rgb_to_od(triplex, crate::color::WHITE)?;
        let conc = deconvolve_linear(&od, &self.stains, self.options)?;
        reconstruct_singleplex(&conc, stain, Stain::Hematoxylin, &self.stains, crate::color::WHITE)
    }
}
