//! OD versus RGB training-domain comparison.

use std::fmt::Write as _;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use stainlab_core::eval::{histogram_correlation, od_histogram, HistogramSpec, OdHistogram};
use stainlab_core::synth::Dataset;
use stainlab_core::{Error, Stain};

use crate::config::{CycleGanConfig, Domain};
use crate::error::{CycleGanError, Result};
use crate::infer::infer_singleplex;
use crate::nets::CycleGanModels;
use crate::train::{train, TrainData};

/// Mean gradient magnitude of the luminance, using forward differences.
pub fn sharpness(img: &RgbImage) -> f64 {
    let (w, h) = (img.width(), img.height());
    if w < 2 || h < 2 {
        return 0.0;
    }
    let lum = |x: u32, y: u32| {
        let p = img.get_pixel(x, y);
        (f64::from(p[0]) + f64::from(p[1]) + f64::from(p[2])) / 3.0
    };
    let mut sum = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let c = lum(x, y);
            let dx = lum(x + 1, y) - c;
            let dy = lum(x, y + 1) - c;
            sum += (dx * dx + dy * dy).sqrt();
        }
    }
    sum / f64::from((w - 1) * (h - 1))
}

/// Mean absolute difference per channel, in gray levels.
pub fn l1_error(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(CycleGanError::Config(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    let n = a.as_raw().len().max(1) as f64;
    Ok(a.as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub domain: Domain,
    /// Mean over evaluation fields.
    pub sharpness: f64,
    /// Mean over evaluation fields.
    pub l1: f64,
    /// Pooled histogram correlation against ground truth; `None` when undefined.
    pub correlation: Option<f64>,
    pub steps: usize,
    pub final_cycle_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub stain: Stain,
    pub seed: u64,
    pub eval_fovs: usize,
    /// Sharpness of the ground-truth singleplex images.
    pub truth_sharpness: f64,
    pub arms: Vec<AblationArm>,
}

impl AblationReport {
    pub fn arm(&self, domain: Domain) -> Option<&AblationArm> {
        self.arms.iter().find(|a| a.domain == domain)
    }

    /// OD arm sharper than RGB arm.
    pub fn od_sharper(&self) -> Option<bool> {
        Some(self.arm(Domain::Od)?.sharpness > self.arm(Domain::Rgb)?.sharpness)
    }

    /// OD arm closer to ground truth than RGB arm.
    pub fn od_lower_l1(&self) -> Option<bool> {
        Some(self.arm(Domain::Od)?.l1 < self.arm(Domain::Rgb)?.l1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("domain,sharpness,l1,correlation,steps\n");
        for a in &self.arms {
            let r = a.correlation.map(|r| r.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", a.domain.name(), a.sharpness, a.l1, r, a.steps);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "Domain ablation for {} ({} evaluation fields, truth sharpness {:.3})\n",
            self.stain, self.eval_fovs, self.truth_sharpness
        );
        let _ = writeln!(s, "{:<8}{:>12}{:>12}{:>14}", "domain", "sharpness", "L1", "correlation");
        for a in &self.arms {
            let r = a.correlation.map(|r| format!("{r:.4}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(s, "{:<8}{:>12.3}{:>12.3}{:>14}", a.domain.name(), a.sharpness, a.l1, r);
        }
        if let (Some(sharp), Some(l1)) = (self.od_sharper(), self.od_lower_l1()) {
            let _ = writeln!(s, "OD sharper: {sharp}; OD lower L1: {l1}");
        }
        s
    }
}

/// Score one trained model on the dataset's evaluation fields.
pub fn evaluate_arm(dataset: &Dataset, models: &CycleGanModels, config: &CycleGanConfig) -> Result<AblationArm> {
    let stain = config.stain_target;
    let vector = dataset
        .config
        .stains
        .get(stain)
        .ok_or_else(|| CycleGanError::Config(format!("dataset has no {stain} stain vector")))?;
    if dataset.eval.is_empty() {
        return Err(CycleGanError::Config("dataset has no evaluation fields".into()));
    }
    let spec = HistogramSpec::default();
    let mut fake_h = OdHistogram::empty(&spec, stain.name(), config.input_domain.name())?;
    let mut truth_h = OdHistogram::empty(&spec, stain.name(), "truth")?;
    let (mut sharp, mut l1) = (0.0, 0.0);
    for pair in &dataset.eval {
        let truth = pair
            .singleplex
            .get(&stain)
            .ok_or_else(|| CycleGanError::Config(format!("evaluation field {} lacks a {stain} singleplex", pair.fov)))?;
        let fake = infer_singleplex(models, &pair.triplex, config)?;
        sharp += sharpness(&fake);
        l1 += l1_error(&fake, truth)?;
        fake_h.merge(&od_histogram(&fake, vector, &spec, config.input_domain.name())?)?;
        truth_h.merge(&od_histogram(truth, vector, &spec, "truth")?)?;
    }
    let correlation = match histogram_correlation(&fake_h, &truth_h) {
        Ok(r) => Some(r),
        Err(Error::CorrelationUndefined(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let n = dataset.eval.len() as f64;
    Ok(AblationArm {
        domain: config.input_domain,
        sharpness: sharp / n,
        l1: l1 / n,
        correlation,
        steps: config.steps,
        final_cycle_loss: None,
    })
}

/// Assemble a report from already-evaluated arms.
pub fn ablation_report(dataset: &Dataset, stain: Stain, seed: u64, arms: Vec<AblationArm>) -> AblationReport {
    let truths: Vec<&RgbImage> = dataset.eval.iter().filter_map(|p| p.singleplex.get(&stain)).collect();
    let truth_sharpness = truths.iter().map(|t| sharpness(t)).sum::<f64>() / truths.len().max(1) as f64;
    AblationReport {
        stain,
        seed,
        eval_fovs: dataset.eval.len(),
        truth_sharpness,
        arms,
    }
}

/// Train one OD-domain and one RGB-domain model from identical settings and compare them.
pub fn ablate_domain(dataset: &Dataset, base: &CycleGanConfig) -> Result<AblationReport> {
    let mut arms = Vec::new();
    for domain in [Domain::Od, Domain::Rgb] {
        let config = CycleGanConfig {
            input_domain: domain,
            ..base.clone()
        };
        let data = TrainData::from_dataset(dataset, config.stain_target, domain)?;
        let state = train(&config, &data, None)?;
        let mut arm = evaluate_arm(dataset, &state.models, &config)?;
        arm.final_cycle_loss = state.history.last().map(|r| r.cycle_total());
        arms.push(arm);
    }
    Ok(ablation_report(dataset, base.stain_target, base.seed, arms))
}
