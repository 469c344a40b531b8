//! Conversion between RGB images and network tensors in either domain.

use image::RgbImage;
use stainlab_autodiff::Tensor;
use stainlab_core::{od_to_rgb, rgb_to_od, OdImage, OD_MAX, WHITE};

use crate::config::Domain;
use crate::error::{CycleGanError, Result};

/// Planar `[1, 3, H, W]` tensor with values in [0, 1]: OD / OD_MAX or RGB / 255.
pub fn image_to_tensor(img: &RgbImage, domain: Domain) -> Result<Tensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let interleaved: Vec<f64> = match domain {
        Domain::Od => rgb_to_od(img, WHITE)?.into_raw().into_iter().map(|v| v / OD_MAX).collect(),
        Domain::Rgb => img.as_raw().iter().map(|v| f64::from(*v) / 255.0).collect(),
    };
    let mut planar = vec![0.0; 3 * w * h];
    for (i, px) in interleaved.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * w * h + i] = px[c];
        }
    }
    Ok(Tensor::from_vec(&[1, 3, h, w], planar)?)
}

/// Inverse of [`image_to_tensor`] for planar data of one image; values are clamped to [0, 1].
pub fn planar_to_image(width: u32, height: u32, planar: &[f64], domain: Domain) -> Result<RgbImage> {
    let n = width as usize * height as usize;
    if planar.len() != 3 * n {
        return Err(CycleGanError::Config(format!(
            "planar buffer has {} values, expected {}",
            planar.len(),
            3 * n
        )));
    }
    let interleaved = (0..n).flat_map(|i| (0..3).map(move |c| planar[c * n + i].clamp(0.0, 1.0)));
    match domain {
        Domain::Od => {
            let od = OdImage::from_raw(width, height, interleaved.map(|v| v * OD_MAX).collect())?;
            Ok(od_to_rgb(&od, WHITE)?)
        }
        Domain::Rgb => {
            let raw = interleaved.map(|v| (v * 255.0).round() as u8).collect();
            Ok(RgbImage::from_raw(width, height, raw).expect("buffer size matches dimensions"))
        }
    }
}

pub fn tensor_to_image(t: &Tensor, domain: Domain) -> Result<RgbImage> {
    let (n, c, h, w) = t.dims4()?;
    if n != 1 || c != 3 {
        return Err(CycleGanError::Config(format!("expected a 1x3xHxW tensor, got {:?}", t.shape())));
    }
    planar_to_image(w as u32, h as u32, t.data(), domain)
}

/// Stack `[1, C, H, W]` tensors into one `[N, C, H, W]` batch.
pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| CycleGanError::Config("cannot stack an empty batch".into()))?;
    let (_, c, h, w) = first.dims4()?;
    let mut data = Vec::with_capacity(items.len() * first.numel());
    for t in items {
        if t.shape() != first.shape() {
            return Err(CycleGanError::Config(format!(
                "batch items differ in shape: {:?} vs {:?}",
                t.shape(),
                first.shape()
            )));
        }
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::from_vec(&[items.len(), c, h, w], data)?)
}

/// Split an `[N, C, H, W]` batch into `N` tensors of shape `[1, C, H, W]`.
pub fn unstack(t: &Tensor) -> Result<Vec<Tensor>> {
    let (n, c, h, w) = t.dims4()?;
    let size = c * h * w;
    t.data()
        .chunks_exact(size)
        .take(n)
        .map(|d| Ok(Tensor::from_vec(&[1, c, h, w], d.to_vec())?))
        .collect()
}

/// `[1, C, size, size]` window of a `[1, C, H, W]` tensor at `(x0, y0)`.
pub fn crop(t: &Tensor, x0: usize, y0: usize, size: usize) -> Result<Tensor> {
    let (_, c, h, w) = t.dims4()?;
    if x0 + size > w || y0 + size > h {
        return Err(CycleGanError::Config(format!("crop {size} at ({x0}, {y0}) exceeds {w}x{h}")));
    }
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in y0..y0 + size {
            let row = ch * h * w + y * w;
            out.extend_from_slice(&t.data()[row + x0..row + x0 + size]);
        }
    }
    Ok(Tensor::from_vec(&[1, c, size, size], out)?)
}
