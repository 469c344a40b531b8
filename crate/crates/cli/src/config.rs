use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stainlab_core::eval::{Assay, HistogramSpec};
use stainlab_core::synth::DatasetConfig;
use stainlab_core::unmix::NmfConfig;
use stainlab_core::Stain;
use stainlab_cyclegan::CycleGanConfig;

use crate::error::{CliError, Result};

/// Everything a command needs, merged from an optional JSON file and flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed; copied into the dataset, model and NMF seeds.
    pub seed: u64,
    pub paper_scale: bool,
    pub assay: Assay,
    /// Marker to train, unmix or ablate.
    pub stain: Stain,
    /// Existing dataset directory; built in memory from `dataset` when absent.
    pub data_dir: Option<PathBuf>,
    /// Directory holding `{assay}_{stain}.ckpt` checkpoints.
    pub models_dir: Option<PathBuf>,
    /// Rows used by linear deconvolution; the marker plus hematoxylin when absent.
    pub linear_stains: Option<Vec<Stain>>,
    pub dataset: DatasetConfig,
    pub cyclegan: CycleGanConfig,
    pub nmf: NmfConfig,
    pub histogram: HistogramSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paper_scale: false,
            assay: Assay::CmetPdl1Egfr,
            stain: Stain::Green,
            data_dir: None,
            models_dir: None,
            linear_stains: None,
            dataset: DatasetConfig::desk(),
            cyclegan: CycleGanConfig::default(),
            nmf: NmfConfig::default(),
            histogram: HistogramSpec::default(),
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub stain: Option<Stain>,
    pub paper_scale: bool,
    pub data_dir: Option<PathBuf>,
    pub models_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Apply overrides and propagate shared settings into the sub-configs.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(stain) = o.stain {
            self.stain = stain;
        }
        self.paper_scale |= o.paper_scale;
        if o.data_dir.is_some() {
            self.data_dir.clone_from(&o.data_dir);
        }
        if o.models_dir.is_some() {
            self.models_dir.clone_from(&o.models_dir);
        }
        if self.paper_scale {
            self.dataset.fov.width = 1586;
            self.dataset.fov.height = 1540;
            self.dataset.patch_size = 256;
            self.cyclegan = self.cyclegan.paper_scale();
        }
        self.dataset.fov.seed = self.seed;
        self.cyclegan.seed = self.seed;
        self.nmf.seed = self.seed;
        self.cyclegan.assay = self.assay;
        self.cyclegan.stain_target = self.stain;
        self.cyclegan.validate()?;
        self.dataset.fov.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.nmf.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.dataset.patch_size > self.dataset.fov.width.min(self.dataset.fov.height) {
            return Err(CliError::Config("dataset patch_size exceeds the field size".into()));
        }
        Ok(self)
    }

    /// Config for training one marker.
    pub fn cyclegan_for(&self, stain: Stain) -> CycleGanConfig {
        CycleGanConfig {
            stain_target: stain,
            ..self.cyclegan.clone()
        }
    }

    pub fn linear_rows(&self) -> Vec<Stain> {
        self.linear_stains
            .clone()
            .unwrap_or_else(|| vec![self.stain, Stain::Hematoxylin])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_desk_scale() {
        let c = RunConfig::default().resolve(&Overrides::default()).unwrap();
        assert_eq!((c.dataset.fov.width, c.dataset.fov.height), (512, 512));
        assert_eq!((c.dataset.patch_size, c.cyclegan.patch_size, c.cyclegan.steps), (64, 64, 300));
    }

    #[test]
    fn paper_scale_switches_dimensions() {
        let o = Overrides {
            paper_scale: true,
            ..Default::default()
        };
        let c = RunConfig::default().resolve(&o).unwrap();
        assert_eq!((c.dataset.fov.width, c.dataset.fov.height), (1586, 1540));
        assert_eq!((c.dataset.patch_size, c.cyclegan.patch_size), (256, 256));
    }

    #[test]
    fn seed_reaches_every_component() {
        let o = Overrides {
            seed: Some(9),
            stain: Some(Stain::Tamra),
            ..Default::default()
        };
        let c = RunConfig::default().resolve(&o).unwrap();
        assert_eq!((c.dataset.fov.seed, c.cyclegan.seed, c.nmf.seed), (9, 9, 9));
        assert_eq!(c.cyclegan.stain_target, Stain::Tamra);
    }

    #[test]
    fn counterstain_target_is_a_config_error() {
        let o = Overrides {
            stain: Some(Stain::Hematoxylin),
            ..Default::default()
        };
        assert!(matches!(RunConfig::default().resolve(&o), Err(CliError::Config(_))));
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 4, "cyclegan": {"steps": 20}}"#).unwrap();
        assert_eq!((c.seed, c.cyclegan.steps, c.cyclegan.lambda_cycle), (4, 20, 10.0));
        assert_eq!(c.dataset, DatasetConfig::desk());
    }
}
