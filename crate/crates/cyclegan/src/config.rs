use serde::{Deserialize, Serialize};
use stainlab_core::eval::Assay;
use stainlab_core::Stain;

use crate::error::{CycleGanError, Result};

/// Image representation seen by the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "OD")]
    Od,
    #[serde(rename = "RGB")]
    Rgb,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Od => "OD",
            Domain::Rgb => "RGB",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorKind {
    /// 64, 128, 256, 1 channels with strides 2, 2, 1, 1.
    Patch4,
    /// 64, 128, 256, 512, 1 channels with strides 2, 2, 2, 1, 1.
    Patch5,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleGanConfig {
    pub input_domain: Domain,
    pub stain_target: Stain,
    pub assay: Assay,
    pub lambda_cycle: f64,
    pub lambda_identity: f64,
    pub lr: f64,
    pub betas: (f64, f64),
    pub steps: usize,
    pub batch: usize,
    pub patch_size: u32,
    pub seed: u64,
    /// Generated-image history used for discriminator updates.
    pub pool_size: usize,
    pub base_channels: usize,
    pub residual_blocks: usize,
    /// Additive encoder-to-decoder skips in the generators.
    pub skip_connections: bool,
    /// Slope of the centered input added to the generator output logits; 0 disables it.
    pub input_skip_gain: f64,
    /// Emit the input plus a bounded correction instead of a squashed image.
    pub residual_output: bool,
    pub discriminator: DiscriminatorKind,
    /// Overlap between inference tiles, in pixels.
    pub tile_overlap: u32,
}

impl Default for CycleGanConfig {
    fn default() -> Self {
        Self {
            input_domain: Domain::Od,
            stain_target: Stain::Green,
            assay: Assay::CmetPdl1Egfr,
            lambda_cycle: 10.0,
            lambda_identity: 0.0,
            lr: 2e-4,
            betas: (0.5, 0.999),
            steps: 300,
            batch: 1,
            patch_size: 64,
            seed: 0,
            pool_size: 50,
            base_channels: 32,
            residual_blocks: 4,
            skip_connections: true,
            input_skip_gain: 2.0,
            residual_output: false,
            discriminator: DiscriminatorKind::Patch4,
            tile_overlap: 32,
        }
    }
}

impl CycleGanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CycleGanError::Config(m.to_string()));
        if !(self.lambda_cycle > 0.0 && self.lambda_cycle.is_finite()) {
            return bad("lambda_cycle must be positive");
        }
        if !(self.lambda_identity >= 0.0 && self.lambda_identity.is_finite()) {
            return bad("lambda_identity must be nonnegative");
        }
        if self.steps < 1 {
            return bad("steps must be at least 1");
        }
        if self.batch < 1 {
            return bad("batch must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("betas must lie in [0, 1)");
        }
        if !self.stain_target.is_marker() {
            return bad("stain_target must be Tamra, QM-Dabsyl or Green");
        }
        if self.patch_size < 16 || self.patch_size % 8 != 0 {
            return bad("patch_size must be a multiple of 8 and at least 16");
        }
        if self.tile_overlap >= self.patch_size {
            return bad("tile_overlap must be smaller than patch_size");
        }
        if !self.input_skip_gain.is_finite() {
            return bad("input_skip_gain must be finite");
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive");
        }
        Ok(())
    }

    /// 256 x 256 patches.
    pub fn paper_scale(mut self) -> Self {
        self.patch_size = 256;
        self
    }
}
