use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::color::pixel_od;
use crate::error::{Error, Result};
use crate::stain::StainVector;
use crate::unmix::BACKGROUND_OD;

/// Binning used for every stain-intensity histogram in a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramSpec {
    pub bins: usize,
    pub range: (f64, f64),
    /// Pixels whose projection falls below this are background and skipped.
    pub background_threshold: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self {
            bins: 64,
            range: (0.0, 2.5),
            background_threshold: BACKGROUND_OD,
        }
    }
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range;
        if self.bins == 0 || !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::invalid("histogram needs at least one bin and a finite range with hi > lo"));
        }
        Ok(())
    }

    pub fn edges(&self) -> Vec<f64> {
        let (lo, hi) = self.range;
        (0..=self.bins)
            .map(|i| lo + (hi - lo) * i as f64 / self.bins as f64)
            .collect()
    }

    /// Bin of a value; values outside the range land in the first or last bin.
    pub fn bin_of(&self, v: f64) -> usize {
        let (lo, hi) = self.range;
        let t = ((v - lo) / (hi - lo) * self.bins as f64).floor();
        if t < 0.0 {
            0
        } else {
            (t as usize).min(self.bins - 1)
        }
    }
}

/// Histogram of stain intensity, the projection of pixel OD onto a unit stain vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub stain: String,
    pub source: String,
    /// Background pixels left out of `counts`.
    pub excluded: u64,
}

impl OdHistogram {
    pub fn empty(spec: &HistogramSpec, stain: &str, source: &str) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            bin_edges: spec.edges(),
            counts: vec![0; spec.bins],
            stain: stain.to_string(),
            source: source.to_string(),
            excluded: 0,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Add another histogram with the same binning (used to pool fields of view).
    pub fn merge(&mut self, other: &OdHistogram) -> Result<()> {
        if self.bin_edges != other.bin_edges {
            return Err(Error::invalid("cannot merge histograms with different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.excluded += other.excluded;
        Ok(())
    }
}

pub fn od_histogram(image: &RgbImage, stain: &StainVector, spec: &HistogramSpec, source: &str) -> Result<OdHistogram> {
    let norm = stain.od.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !((norm - 1.0).abs() < 1e-6) || stain.od.iter().any(|c| *c < 0.0) {
        return Err(Error::invalid(format!("stain vector {} must be unit norm and nonnegative", stain.name)));
    }
    let mut h = OdHistogram::empty(spec, &stain.name.to_string(), source)?;
    for p in image.pixels() {
        let od = pixel_od(p);
        let proj = stain.dot(od);
        if proj < spec.background_threshold {
            h.excluded += 1;
        } else {
            h.counts[spec.bin_of(proj)] += 1;
        }
    }
    Ok(h)
}

/// Pearson correlation of two count vectors with identical binning.
pub fn histogram_correlation(h1: &OdHistogram, h2: &OdHistogram) -> Result<f64> {
    if h1.bin_edges != h2.bin_edges || h1.counts.len() != h2.counts.len() {
        return Err(Error::invalid("histograms have different binning"));
    }
    pearson(
        &h1.counts.iter().map(|c| *c as f64).collect::<Vec<_>>(),
        &h2.counts.iter().map(|c| *c as f64).collect::<Vec<_>>(),
    )
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("pearson needs two nonempty series of equal length"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::CorrelationUndefined("a series has zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}
