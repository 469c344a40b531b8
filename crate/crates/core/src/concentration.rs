//! Per-stain concentration planes and their on-disk formats.
//!
//! Two formats are supported: a multi-page 32-bit float TIFF (one page per stain,
//! page description = stain name) and a raw little-endian `f32` plane dump with a
//! JSON sidecar `{"planes":[names],"width":W,"height":H}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;

use crate::error::{Error, Result};
use crate::stain::Stain;

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMap {
    width: u32,
    height: u32,
    stains: Vec<Stain>,
    planes: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    planes: Vec<Stain>,
    width: u32,
    height: u32,
}

impl ConcentrationMap {
    pub fn zeros(width: u32, height: u32, stains: Vec<Stain>) -> Self {
        let n = width as usize * height as usize;
        let planes = vec![vec![0.0; n]; stains.len()];
        Self {
            width,
            height,
            stains,
            planes,
        }
    }

    pub fn from_planes(width: u32, height: u32, stains: Vec<Stain>, planes: Vec<Vec<f64>>) -> Result<Self> {
        let n = width as usize * height as usize;
        if stains.len() != planes.len() {
            return Err(Error::invalid(format!(
                "{} stain names for {} planes",
                stains.len(),
                planes.len()
            )));
        }
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::invalid(format!("every plane must hold {n} values")));
        }
        if planes.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("concentrations must be finite and nonnegative"));
        }
        Ok(Self {
            width,
            height,
            stains,
            planes,
        })
    }

    /// Skips the nonnegativity check; for unclamped least-squares output only.
    pub(crate) fn from_planes_unchecked(width: u32, height: u32, stains: Vec<Stain>, planes: Vec<Vec<f64>>) -> Self {
        Self {
            width,
            height,
            stains,
            planes,
        }
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

    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }

    pub fn stains(&self) -> &[Stain] {
        &self.stains
    }

    pub fn planes(&self) -> &[Vec<f64>] {
        &self.planes
    }

    pub fn plane(&self, stain: Stain) -> Option<&[f64]> {
        self.stains
            .iter()
            .position(|&s| s == stain)
            .map(|i| self.planes[i].as_slice())
    }

    pub fn plane_mut(&mut self, stain: Stain) -> Option<&mut Vec<f64>> {
        let i = self.stains.iter().position(|&s| s == stain)?;
        Some(&mut self.planes[i])
    }

    pub fn get(&self, plane: usize, x: u32, y: u32) -> f64 {
        self.planes[plane][y as usize * self.width as usize + x as usize]
    }

    /// Sets one value; negative inputs are stored as zero.
    pub fn set(&mut self, plane: usize, x: u32, y: u32, value: f64) {
        let w = self.width as usize;
        self.planes[plane][y as usize * w + x as usize] = value.max(0.0);
    }

    /// Copy keeping only the listed planes' values; every other plane becomes zero.
    pub fn keep_only(&self, keep: &[Stain]) -> Self {
        let mut out = self.clone();
        for (s, p) in out.stains.iter().zip(out.planes.iter_mut()) {
            if !keep.contains(s) {
                p.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        out
    }

    /// Rectangular window copy.
    pub fn crop(&self, x0: u32, y0: u32, width: u32, height: u32) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid("crop window exceeds concentration map"));
        }
        let w = self.width as usize;
        let planes = self
            .planes
            .iter()
            .map(|p| {
                (y0..y0 + height)
                    .flat_map(|y| {
                        let start = y as usize * w + x0 as usize;
                        p[start..start + width as usize].iter().copied()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            width,
            height,
            stains: self.stains.clone(),
            planes,
        })
    }

    /// Writes `<path>` (raw f32 planes) and `<path>.json` (sidecar).
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for v in self.planes.iter().flatten() {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
        out.flush()?;
        let sidecar = Sidecar {
            planes: self.stains.clone(),
            width: self.width,
            height: self.height,
        };
        std::fs::write(sidecar_path(path), serde_json::to_string(&sidecar)?)?;
        Ok(())
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let n = sidecar.width as usize * sidecar.height as usize;
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.len() != n * sidecar.planes.len() * 4 {
            return Err(Error::invalid(format!(
                "raw concentration file has {} bytes, sidecar implies {}",
                bytes.len(),
                n * sidecar.planes.len() * 4
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        let planes = values.chunks_exact(n.max(1)).take(sidecar.planes.len()).map(<[f64]>::to_vec).collect();
        Self::from_planes(sidecar.width, sidecar.height, sidecar.planes, planes)
    }

    pub fn write_tiff(&self, path: &Path) -> Result<()> {
        let mut encoder = TiffEncoder::new(BufWriter::new(File::create(path)?))?;
        for (stain, plane) in self.stains.iter().zip(&self.planes) {
            let data: Vec<f32> = plane.iter().map(|&v| v as f32).collect();
            let mut image = encoder.new_image::<colortype::Gray32Float>(self.width, self.height)?;
            image.encoder().write_tag(Tag::ImageDescription, stain.name())?;
            image.write_data(&data)?;
        }
        Ok(())
    }

    pub fn read_tiff(path: &Path) -> Result<Self> {
        let mut decoder = Decoder::new(BufReader::new(File::open(path)?))?;
        let mut stains = Vec::new();
        let mut planes = Vec::new();
        let (width, height) = decoder.dimensions()?;
        loop {
            if decoder.dimensions()? != (width, height) {
                return Err(Error::invalid("TIFF pages differ in size"));
            }
            let name = decoder.get_tag_ascii_string(Tag::ImageDescription)?;
            stains.push(name.trim_end_matches('\0').parse::<Stain>()?);
            match decoder.read_image()? {
                DecodingResult::F32(v) => planes.push(v.into_iter().map(f64::from).collect()),
                _ => return Err(Error::invalid("concentration TIFF pages must be 32-bit float")),
            }
            if !decoder.more_images() {
                break;
            }
            decoder.next_image()?;
        }
        Self::from_planes(width, height, stains, planes)
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}
