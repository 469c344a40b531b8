//! Dataset assembly: unpaired triplex and singleplex training patches, plus
//! pixel-aligned evaluation fields with ground truth.
//!
//! On disk a dataset directory holds
//!
//! ```text
//! dataset.json            configuration used to build it
//! manifest.jsonl          one record per training patch {arm, marker, path, split, fov, origin}
//! patches/<arm>/...png
//! eval.jsonl              one record per evaluation field
//! eval/fovNN/triplex.png, <marker>.png, truth.tif
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use image::{imageops, RgbImage};
use serde::{Deserialize, Serialize};

use super::layout::{generate_layout, FovSpec};
use super::patches::{extract_patches, Split, SplitRatio};
use super::render::render;
use crate::concentration::ConcentrationMap;
use crate::error::{Error, Result};
use crate::io::{read_png, write_atomic, write_png};
use crate::seed::derive_seed;
use crate::stain::{Stain, StainMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Field template; its seed is the dataset master seed.
    pub fov: FovSpec,
    pub n_fovs: usize,
    pub patches_per_fov: usize,
    pub patch_size: u32,
    pub split: SplitRatio,
    /// Pixel-aligned fields held out for evaluation.
    pub n_eval_fovs: usize,
    pub stains: StainMatrix,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            fov: FovSpec::default(),
            n_fovs: 10,
            patches_per_fov: 30,
            patch_size: 256,
            split: SplitRatio::default(),
            n_eval_fovs: 10,
            stains: StainMatrix::default_triplex(),
        }
    }
}

impl DatasetConfig {
    /// 512 x 512 fields and 64 x 64 patches.
    pub fn desk() -> Self {
        Self {
            fov: FovSpec::desk(),
            patch_size: 64,
            ..Self::default()
        }
    }
}

/// Which collection a patch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Triplex,
    Singleplex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub arm: Arm,
    /// Marker shown in a singleplex patch; `None` for triplex patches.
    pub marker: Option<Stain>,
    /// Relative to the dataset directory.
    pub path: String,
    pub split: Split,
    pub fov: u32,
    pub origin: (u32, u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub fov: u32,
    pub triplex: RgbImage,
    /// Ground-truth singleplex (marker + hematoxylin) rendered from the same layout.
    pub singleplex: BTreeMap<Stain, RgbImage>,
    pub truth: ConcentrationMap,
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalRecord {
    fov: u32,
    triplex: String,
    singleplex: BTreeMap<Stain, String>,
    truth: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub records: Vec<PatchRecord>,
    /// Image for each record, same order.
    pub patches: Vec<RgbImage>,
    pub eval: Vec<EvalPair>,
}

fn arm_dir(arm: Arm, marker: Option<Stain>) -> String {
    match (arm, marker) {
        (Arm::Triplex, _) => "triplex".to_string(),
        (Arm::Singleplex, Some(m)) => format!("singleplex-{}", m.slug()),
        (Arm::Singleplex, None) => "singleplex".to_string(),
    }
}

fn fov_spec(config: &DatasetConfig, tag: &str, index: usize) -> FovSpec {
    FovSpec {
        seed: derive_seed(config.fov.seed, tag, index as u64),
        ..config.fov.clone()
    }
}

/// Render every arm and cut its patches. Each field draws its own layout.
pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.fov.validate()?;
    for m in Stain::MARKERS.iter().chain([&Stain::Hematoxylin]) {
        if config.stains.index_of(*m).is_none() {
            return Err(Error::invalid(format!("dataset stain matrix lacks {m}")));
        }
    }
    let arms: Vec<(Arm, Option<Stain>)> = std::iter::once((Arm::Triplex, None))
        .chain(Stain::MARKERS.iter().map(|&m| (Arm::Singleplex, Some(m))))
        .collect();

    let mut records = Vec::new();
    let mut patches = Vec::new();
    for &(arm, marker) in &arms {
        let dir = arm_dir(arm, marker);
        let markers: Vec<Stain> = marker.map_or(Stain::MARKERS.to_vec(), |m| vec![m]);
        for fov in 0..config.n_fovs {
            let spec = fov_spec(config, &format!("fov/{dir}"), fov);
            let layout = generate_layout(&spec)?;
            let (image, _) = render(&layout, &markers, &config.stains, &spec)?;
            let set = extract_patches(
                fov as u32,
                (spec.width, spec.height),
                config.patches_per_fov,
                config.patch_size,
                derive_seed(config.fov.seed, &format!("patches/{dir}"), 0),
                config.split,
            )?;
            for (i, p) in set.patches.into_iter().enumerate() {
                let crop = imageops::crop_imm(&image, p.origin.0, p.origin.1, p.size, p.size).to_image();
                records.push(PatchRecord {
                    arm,
                    marker,
                    path: format!("patches/{dir}/fov{fov:02}_p{i:03}.png"),
                    split: p.split,
                    fov: fov as u32,
                    origin: p.origin,
                });
                patches.push(crop);
            }
        }
    }

    let mut eval = Vec::with_capacity(config.n_eval_fovs);
    for fov in 0..config.n_eval_fovs {
        let spec = fov_spec(config, "fov/eval", fov);
        let layout = generate_layout(&spec)?;
        let (triplex, truth) = render(&layout, &Stain::MARKERS, &config.stains, &spec)?;
        let singleplex = Stain::MARKERS
            .iter()
            .map(|&m| Ok((m, render(&layout, &[m], &config.stains, &spec)?.0)))
            .collect::<Result<_>>()?;
        eval.push(EvalPair {
            fov: fov as u32,
            triplex,
            singleplex,
            truth,
        });
    }
    Ok(Dataset {
        config: config.clone(),
        records,
        patches,
        eval,
    })
}

impl Dataset {
    /// The JSON-lines manifest, one line per training patch.
    pub fn manifest_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"));
        }
        out
    }

    pub fn images(&self, arm: Arm, marker: Option<Stain>, split: Split) -> Vec<&RgbImage> {
        self.records
            .iter()
            .zip(&self.patches)
            .filter(|(r, _)| r.arm == arm && r.marker == marker && r.split == split)
            .map(|(_, img)| img)
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (r, img) in self.records.iter().zip(&self.patches) {
            let path = dir.join(&r.path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            write_png(&path, img)?;
        }
        let mut eval_lines = String::new();
        for pair in &self.eval {
            let sub = format!("eval/fov{:02}", pair.fov);
            std::fs::create_dir_all(dir.join(&sub))?;
            let triplex = format!("{sub}/triplex.png");
            write_png(&dir.join(&triplex), &pair.triplex)?;
            let mut singleplex = BTreeMap::new();
            for (m, img) in &pair.singleplex {
                let p = format!("{sub}/{}.png", m.slug());
                write_png(&dir.join(&p), img)?;
                singleplex.insert(*m, p);
            }
            let truth = format!("{sub}/truth.tif");
            pair.truth.write_tiff(&dir.join(&truth))?;
            let rec = EvalRecord {
                fov: pair.fov,
                triplex,
                singleplex,
                truth,
            };
            let _ = writeln!(eval_lines, "{}", serde_json::to_string(&rec)?);
        }
        write_atomic(&dir.join("eval.jsonl"), eval_lines.as_bytes())?;
        write_atomic(&dir.join("manifest.jsonl"), self.manifest_jsonl().as_bytes())?;
        write_atomic(
            &dir.join("dataset.json"),
            serde_json::to_string_pretty(&self.config)?.as_bytes(),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: DatasetConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("dataset.json"))?)?;
        let mut records = Vec::new();
        let mut patches = Vec::new();
        for line in std::fs::read_to_string(dir.join("manifest.jsonl"))?.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let r: PatchRecord = serde_json::from_str(line)?;
            patches.push(read_png(&dir.join(&r.path))?);
            records.push(r);
        }
        let mut eval = Vec::new();
        for line in std::fs::read_to_string(dir.join("eval.jsonl"))?.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let r: EvalRecord = serde_json::from_str(line)?;
            let singleplex = r
                .singleplex
                .iter()
                .map(|(m, p)| Ok((*m, read_png(&dir.join(p))?)))
                .collect::<Result<_>>()?;
            eval.push(EvalPair {
                fov: r.fov,
                triplex: read_png(&dir.join(&r.triplex))?,
                singleplex,
                truth: ConcentrationMap::read_tiff(&dir.join(&r.truth))?,
            });
        }
        Ok(Self {
            config,
            records,
            patches,
            eval,
        })
    }
}
