//! Image pairs available to a study, stored under content-hash file names.

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stainlab_core::eval::{Assay, ImageArm};
use stainlab_core::io::{encode_png, write_atomic};
use stainlab_core::Stain;

use crate::error::{ReviewError, Result};

pub const CATALOG_FILE: &str = "study.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const IMAGE_DIR: &str = "images";

/// Adjacent and synthetic singleplex images of one field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub assay: Assay,
    pub stain: Stain,
    pub fov: u32,
    /// Content-hash file name under `images/`.
    pub adjacent: String,
    pub synthetic: String,
}

impl CatalogEntry {
    pub fn image(&self, arm: ImageArm) -> &str {
        match arm {
            ImageArm::Adjacent => &self.adjacent,
            ImageArm::Synthetic => &self.synthetic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    /// Salt for session tokens.
    pub secret: String,
    pub entries: Vec<CatalogEntry>,
}

impl Catalog {
    pub fn find(&self, assay: Assay, stain: Stain, fov: u32) -> Option<&CatalogEntry> {
        self.entries
            .iter()
            .find(|e| e.assay == assay && e.stain == stain && e.fov == fov)
    }

    /// Fields available for one (assay, stain), sorted.
    pub fn fovs(&self, assay: Assay, stain: Stain) -> Vec<u32> {
        let mut v: Vec<u32> = self
            .entries
            .iter()
            .filter(|e| e.assay == assay && e.stain == stain)
            .map(|e| e.fov)
            .collect();
        v.sort_unstable();
        v
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CATALOG_FILE);
        if !path.exists() {
            return Err(ReviewError::NotFound(format!("no study at {}", dir.display())));
        }
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Lowercase hex SHA-256 of the PNG encoding, plus `.png`.
pub fn content_name(png: &[u8]) -> String {
    format!("{}.png", hex::encode(Sha256::digest(png)))
}

pub fn is_content_name(name: &str) -> bool {
    name.strip_suffix(".png")
        .is_some_and(|h| h.len() == 64 && h.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)))
}

/// Writes a study directory: images first, then the catalog.
#[derive(Debug)]
pub struct StudyBuilder {
    dir: PathBuf,
    catalog: Catalog,
}

impl StudyBuilder {
    pub fn new(dir: &Path, secret: impl Into<String>) -> Result<Self> {
        std::fs::create_dir_all(dir.join(IMAGE_DIR))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            catalog: Catalog {
                secret: secret.into(),
                entries: Vec::new(),
            },
        })
    }

    fn store(&self, img: &RgbImage) -> Result<String> {
        let png = encode_png(img)?;
        let name = content_name(&png);
        let path = self.dir.join(IMAGE_DIR).join(&name);
        if !path.exists() {
            write_atomic(&path, &png)?;
        }
        Ok(name)
    }

    pub fn add_pair(&mut self, assay: Assay, stain: Stain, fov: u32, adjacent: &RgbImage, synthetic: &RgbImage) -> Result<()> {
        if self.catalog.find(assay, stain, fov).is_some() {
            return Err(ReviewError::Invalid(format!("duplicate pair {assay} {stain} fov {fov}")));
        }
        let entry = CatalogEntry {
            assay,
            stain,
            fov,
            adjacent: self.store(adjacent)?,
            synthetic: self.store(synthetic)?,
        };
        self.catalog.entries.push(entry);
        Ok(())
    }

    pub fn finish(self) -> Result<Catalog> {
        write_atomic(&self.dir.join(CATALOG_FILE), &serde_json::to_vec_pretty(&self.catalog)?)?;
        Ok(self.catalog)
    }
}
