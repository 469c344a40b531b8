use image::RgbImage;
use rand_distr::{Distribution, Normal};

use super::layout::{CellLayout, FovSpec};
use crate::color::{compose_od, od_to_rgb, OdImage, WHITE};
use crate::concentration::ConcentrationMap;
use crate::error::{Error, Result};
use crate::seed;
use crate::stain::{Stain, StainMatrix};

/// Peak stain amount of a fully expressed membrane.
pub const MEMBRANE_SCALE: f64 = 1.2;
/// Peak hematoxylin amount of a nucleus with level 1.
pub const NUCLEUS_SCALE: f64 = 0.8;

fn marker_mask(markers: &[Stain]) -> u64 {
    markers
        .iter()
        .filter_map(|m| m.marker_index())
        .fold(0, |acc, i| acc | (1 << i))
}

/// Ground-truth concentrations for a layout showing only the selected markers
/// (an empty selection renders hematoxylin alone).
pub fn render_concentrations(layout: &CellLayout, markers: &[Stain], stains: &StainMatrix) -> Result<ConcentrationMap> {
    if let Some(m) = markers.iter().find(|m| !m.is_marker()) {
        return Err(Error::invalid(format!("{m} is not a marker stain")));
    }
    let hema = stains
        .index_of(Stain::Hematoxylin)
        .ok_or_else(|| Error::invalid("stain matrix lacks a hematoxylin row"))?;
    let marker_planes: Vec<(usize, usize)> = markers
        .iter()
        .map(|&m| {
            let plane = stains
                .index_of(m)
                .ok_or_else(|| Error::invalid(format!("stain matrix lacks a {m} row")))?;
            Ok((m.marker_index().expect("checked marker"), plane))
        })
        .collect::<Result<_>>()?;

    let (w, h) = (layout.width, layout.height);
    let mut conc = ConcentrationMap::zeros(w, h, stains.names());
    let mut planes: Vec<Vec<f64>> = conc.planes().to_vec();
    for cell in &layout.cells {
        let reach = cell.membrane_radius + cell.membrane_thickness / 2.0 + 1.0;
        let (cx, cy) = cell.center;
        let x0 = (cx - reach).floor().max(0.0) as u32;
        let y0 = (cy - reach).floor().max(0.0) as u32;
        let x1 = ((cx + reach).ceil() as i64).clamp(0, i64::from(w) - 1) as u32;
        let y1 = ((cy + reach).ceil() as i64).clamp(0, i64::from(h) - 1) as u32;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((f64::from(x) + 0.5 - cx).powi(2) + (f64::from(y) + 0.5 - cy).powi(2)).sqrt();
                let idx = y as usize * w as usize + x as usize;
                // one-pixel linear ramps give antialiased edges
                let nucleus = (cell.nucleus_radius - d + 0.5).clamp(0.0, 1.0);
                if nucleus > 0.0 {
                    planes[hema][idx] += nucleus * cell.hematoxylin_level * NUCLEUS_SCALE;
                }
                let ring = (cell.membrane_thickness / 2.0 - (d - cell.membrane_radius).abs() + 0.5).clamp(0.0, 1.0);
                if ring > 0.0 {
                    for &(mi, plane) in &marker_planes {
                        let e = cell.expression[mi];
                        if e > 0.0 {
                            planes[plane][idx] += ring * e * MEMBRANE_SCALE;
                        }
                    }
                }
            }
        }
    }
    for (i, p) in planes.into_iter().enumerate() {
        let stain = conc.stains()[i];
        *conc.plane_mut(stain).expect("plane exists") = p;
    }
    Ok(conc)
}

/// Render an image plus its ground-truth concentrations. Noise is added in OD
/// before conversion and is seeded from the FOV seed and the marker selection.
pub fn render(
    layout: &CellLayout,
    markers: &[Stain],
    stains: &StainMatrix,
    spec: &FovSpec,
) -> Result<(RgbImage, ConcentrationMap)> {
    let conc = render_concentrations(layout, markers, stains)?;
    let od = compose_od(&conc, stains)?;
    let od = if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = seed::stream(spec.seed, "noise", marker_mask(markers));
        let noisy = od.as_slice().iter().map(|v| v + normal.sample(&mut rng)).collect();
        OdImage::from_raw(od.width(), od.height(), noisy)?
    } else {
        od
    };
    Ok((od_to_rgb(&od, WHITE)?, conc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::compose;
    use crate::synth::layout::{generate_layout, Cell};

    fn spec(seed: u64) -> FovSpec {
        FovSpec {
            width: 96,
            height: 80,
            seed,
            noise_sigma: 0.0,
            colocalization_probs: [0.7; 3],
            ..FovSpec::default()
        }
    }

    #[test]
    fn empty_layout_renders_background() {
        let m = StainMatrix::default_triplex();
        let (img, conc) = render(&CellLayout::empty(10, 7), &Stain::MARKERS, &m, &spec(0)).unwrap();
        assert!(img.pixels().all(|p| p.0 == [255; 3]));
        assert!(conc.planes().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn singleplex_other_marker_planes_zero() {
        let m = StainMatrix::default_triplex();
        let s = spec(1);
        let layout = generate_layout(&s).unwrap();
        let (_, conc) = render(&layout, &[Stain::Tamra], &m, &s).unwrap();
        assert!(conc.plane(Stain::QmDabsyl).unwrap().iter().all(|v| *v == 0.0));
        assert!(conc.plane(Stain::Green).unwrap().iter().all(|v| *v == 0.0));
        assert!(conc.plane(Stain::Tamra).unwrap().iter().any(|v| *v > 0.0));
        assert!(conc.plane(Stain::Hematoxylin).unwrap().iter().any(|v| *v > 0.0));
    }

    #[test]
    fn noiseless_render_equals_compose() {
        let m = StainMatrix::default_triplex();
        let s = spec(2);
        let layout = generate_layout(&s).unwrap();
        let (img, conc) = render(&layout, &Stain::MARKERS, &m, &s).unwrap();
        assert_eq!(img, compose(&conc, &m, WHITE).unwrap());
    }

    #[test]
    fn colocalized_membrane_is_sum_of_stain_vectors() {
        let m = StainMatrix::default_triplex();
        let cell = Cell {
            center: (20.5, 20.5),
            nucleus_radius: 4.0,
            membrane_radius: 10.0,
            membrane_thickness: 3.0,
            expression: [0.9, 0.5, 0.7],
            hematoxylin_level: 0.8,
        };
        let layout = CellLayout {
            width: 41,
            height: 41,
            cells: vec![cell],
        };
        let conc = render_concentrations(&layout, &Stain::MARKERS, &m).unwrap();
        let od = compose_od(&conc, &m).unwrap();
        // pixel centered on the membrane ring (distance exactly 10)
        let px = od.pixel(30, 20);
        for c in 0..3 {
            let want: f64 = (0..3).map(|i| cell_expr(i) * MEMBRANE_SCALE * m.rows()[i].od[c]).sum();
            assert!((px[c] - want).abs() < 1e-9, "channel {c}: {} vs {want}", px[c]);
        }
        fn cell_expr(i: usize) -> f64 {
            [0.9, 0.5, 0.7][i]
        }
    }

    #[test]
    fn noise_is_seeded() {
        let m = StainMatrix::default_triplex();
        let s = FovSpec {
            noise_sigma: 0.02,
            ..spec(3)
        };
        let layout = generate_layout(&s).unwrap();
        let (a, _) = render(&layout, &Stain::MARKERS, &m, &s).unwrap();
        let (b, _) = render(&layout, &Stain::MARKERS, &m, &s).unwrap();
        assert_eq!(a, b);
        let (clean, _) = render(&layout, &Stain::MARKERS, &m, &spec(3)).unwrap();
        assert_ne!(a, clean);
    }

    #[test]
    fn hematoxylin_marker_rejected() {
        let m = StainMatrix::default_triplex();
        assert!(render_concentrations(&CellLayout::empty(4, 4), &[Stain::Hematoxylin], &m).is_err());
    }
}
