//! Tiled inference, per-(assay, stain) checkpoints and the GAN synthesizer.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use stainlab_autodiff::{load_checkpoint, restore_into, save_checkpoint, Graph, Tensor};
use stainlab_core::eval::Assay;
use stainlab_core::unmix::SingleplexSynthesizer;
use stainlab_core::Stain;

use crate::config::{CycleGanConfig, Domain};
use crate::domain::{image_to_tensor, planar_to_image};
use crate::error::{CycleGanError, Result};
use crate::nets::CycleGanModels;

/// Tile origins along one axis: a regular stride of `tile - overlap`, with the
/// last tile flush against the far edge.
pub fn tile_origins(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let stride = (tile - overlap).max(1);
    let mut out: Vec<usize> = (0..len - tile).step_by(stride).collect();
    out.push(len - tile);
    out
}

/// Blending weight of a tile pixel at offset `i`: ramps from the tile border
/// over `overlap` pixels, never reaching zero.
fn feather(i: usize, tile: usize, overlap: usize) -> f64 {
    let d = i.min(tile - 1 - i) as f64 + 1.0;
    (d / (overlap as f64 + 1.0)).min(1.0)
}

/// Apply `f` to overlapping `tile x tile` windows of a planar `[C, H, W]`
/// image and blend the results with feathered weights. Images smaller than a
/// tile are padded with `pad` on the right and bottom.
pub fn tile_apply<F>(
    planar: &[f64],
    channels: usize,
    width: usize,
    height: usize,
    tile: usize,
    overlap: usize,
    pad: f64,
    mut f: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    if planar.len() != channels * width * height || width == 0 || height == 0 {
        return Err(CycleGanError::Config(format!(
            "planar buffer of {} values does not match {channels}x{height}x{width}",
            planar.len()
        )));
    }
    if overlap >= tile {
        return Err(CycleGanError::Config("overlap must be smaller than the tile".into()));
    }
    let (pw, ph) = (width.max(tile), height.max(tile));
    let mut acc = vec![0.0; channels * width * height];
    let mut weight = vec![0.0; width * height];
    let mut buf = vec![0.0; channels * tile * tile];
    for y0 in tile_origins(ph, tile, overlap) {
        for x0 in tile_origins(pw, tile, overlap) {
            for c in 0..channels {
                for ty in 0..tile {
                    for tx in 0..tile {
                        let (x, y) = (x0 + tx, y0 + ty);
                        buf[(c * tile + ty) * tile + tx] = if x < width && y < height {
                            planar[(c * height + y) * width + x]
                        } else {
                            pad
                        };
                    }
                }
            }
            let out = f(&Tensor::from_vec(&[1, channels, tile, tile], buf.clone())?)?;
            if out.shape() != [1, channels, tile, tile] {
                return Err(CycleGanError::Config(format!("tile function returned shape {:?}", out.shape())));
            }
            for ty in 0..tile.min(height.saturating_sub(y0)) {
                let wy = feather(ty, tile, overlap);
                for tx in 0..tile.min(width.saturating_sub(x0)) {
                    let wgt = wy * feather(tx, tile, overlap);
                    let (x, y) = (x0 + tx, y0 + ty);
                    weight[y * width + x] += wgt;
                    for c in 0..channels {
                        acc[(c * height + y) * width + x] += wgt * out.data()[(c * tile + ty) * tile + tx];
                    }
                }
            }
        }
    }
    let n = width * height;
    for (i, v) in acc.iter_mut().enumerate() {
        *v /= weight[i % n];
    }
    Ok(acc)
}

/// Translate a triplex image into a synthetic singleplex with the `G` generator.
/// Output has the input's size; large inputs are tiled.
pub fn infer_singleplex(models: &CycleGanModels, triplex: &RgbImage, config: &CycleGanConfig) -> Result<RgbImage> {
    let x = image_to_tensor(triplex, config.input_domain)?;
    let (w, h) = (triplex.width() as usize, triplex.height() as usize);
    let pad = match config.input_domain {
        Domain::Od => 0.0,
        Domain::Rgb => 1.0,
    };
    let planar = tile_apply(
        x.data(),
        3,
        w,
        h,
        config.patch_size as usize,
        config.tile_overlap as usize,
        pad,
        |tile| {
            let mut g = Graph::new();
            let v = g.input(tile.clone())?;
            let y = models.g.forward(&mut g, &models.store, v)?;
            Ok(g.value(y).clone())
        },
    )?;
    planar_to_image(triplex.width(), triplex.height(), &planar, config.input_domain)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    config: CycleGanConfig,
    parameter_count: usize,
    step: usize,
}

/// Location of the checkpoint for one (assay, stain) pair.
pub fn checkpoint_path(dir: &Path, assay: Assay, stain: Stain) -> PathBuf {
    dir.join(format!("{}_{}.ckpt", assay.name(), stain.slug()))
}

/// Save all four networks with the training config in the header.
pub fn save_models(path: &Path, models: &CycleGanModels, config: &CycleGanConfig, step: usize) -> Result<()> {
    let meta = CheckpointMeta {
        config: config.clone(),
        parameter_count: models.parameter_count(),
        step,
    };
    save_checkpoint(path, &models.store, &serde_json::to_value(meta)?)?;
    Ok(())
}

/// Rebuild the networks described in a checkpoint and load their weights.
pub fn load_models(path: &Path) -> Result<(CycleGanModels, CycleGanConfig)> {
    if !path.exists() {
        return Err(CycleGanError::NotReady(format!("no trained checkpoint at {}", path.display())));
    }
    let (store, meta) = load_checkpoint(path)?;
    let meta: CheckpointMeta = serde_json::from_value(meta)?;
    let mut models = CycleGanModels::build(&meta.config)?;
    restore_into(&mut models.store, &store)?;
    Ok((models, meta.config))
}

/// Trained per-stain models for one assay.
#[derive(Debug, Clone, Default)]
pub struct GanSynthesizer {
    pub models: BTreeMap<Stain, (CycleGanModels, CycleGanConfig)>,
}

impl GanSynthesizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, models: CycleGanModels, config: CycleGanConfig) {
        self.models.insert(config.stain_target, (models, config));
    }

    /// Load every stain's checkpoint for `assay`; any missing one is a not-ready error.
    pub fn load(dir: &Path, assay: Assay, stains: &[Stain]) -> Result<Self> {
        let mut out = Self::new();
        for s in stains {
            let (m, c) = load_models(&checkpoint_path(dir, assay, *s))?;
            if c.stain_target != *s {
                return Err(CycleGanError::Config(format!(
                    "checkpoint for {s} was trained for {}",
                    c.stain_target
                )));
            }
            out.insert(m, c);
        }
        Ok(out)
    }
}

impl SingleplexSynthesizer for GanSynthesizer {
    fn method(&self) -> &str {
        "gan"
    }

    fn synthesize(&self, triplex: &RgbImage, stain: Stain) -> stainlab_core::Result<RgbImage> {
        let (m, c) = self
            .models
            .get(&stain)
            .ok_or_else(|| CycleGanError::NotReady(format!("no trained model for {stain}")))?;
        Ok(infer_singleplex(m, triplex, c)?)
    }
}
