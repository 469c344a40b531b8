//! Non-negative matrix factorization of OD pixels with Lee-Seung multiplicative
//! updates for the Frobenius objective.
//!
//! The foreground pixels form `V` (n x 3). The factorization is `V ~= H W` with
//! `W` (k x 3) the stain basis and `H` (n x k) the concentrations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::OdImage;
use crate::concentration::ConcentrationMap;
use crate::error::{Error, Result};
use crate::stain::{normalize_stain_vector, Stain, StainMatrix, StainVector};

const EPS: f64 = 1e-12;

/// Pixels whose every OD channel is below this are treated as background.
pub const BACKGROUND_OD: f64 = 0.08;

/// Upper bound of the uniform perturbation added to reference rows at start-up.
const INIT_NOISE: f64 = 0.05;

/// Starting share of the non-dominant rows in each pixel.
const INIT_MIX: f64 = 0.01;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NmfConfig {
    pub stain_count: usize,
    pub max_iters: usize,
    /// Stop once the relative objective change falls below this.
    pub tolerance: f64,
    pub seed: u64,
    /// Initial basis directions; also names the output planes.
    pub reference: StainMatrix,
    /// When present, only concentrations are updated.
    pub fixed_basis: Option<StainMatrix>,
    /// Rows of `reference` that stay fixed while the others are learned.
    pub fixed_rows: Vec<Stain>,
    pub background_od: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            stain_count: 4,
            max_iters: 500,
            tolerance: 1e-6,
            seed: 0,
            reference: StainMatrix::default_triplex(),
            fixed_basis: None,
            fixed_rows: vec![Stain::Hematoxylin],
            background_od: BACKGROUND_OD,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.stain_count) {
            return Err(Error::invalid(format!("stain_count must be 1..=4, got {}", self.stain_count)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::invalid("tolerance must be nonnegative"));
        }
        let basis = self.fixed_basis.as_ref().unwrap_or(&self.reference);
        if basis.len() != self.stain_count {
            return Err(Error::invalid(format!(
                "stain_count {} does not match {} basis rows",
                self.stain_count,
                basis.len()
            )));
        }
        if let Some(s) = self.fixed_rows.iter().find(|s| basis.index_of(**s).is_none()) {
            return Err(Error::invalid(format!("fixed row {s} is not in the basis")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NmfResult {
    /// Unit-norm basis rows, in the order of the configured reference.
    pub basis: StainMatrix,
    pub conc: ConcentrationMap,
    /// Frobenius reconstruction error over the fitted pixels after each iteration.
    pub objective_history: Vec<f64>,
    pub converged: bool,
}

pub fn nmf_unmix(od: &OdImage, cfg: &NmfConfig) -> Result<NmfResult> {
    cfg.validate()?;
    if od.as_slice().iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateInput("image has no optical density to factor".into()));
    }
    let foreground: Vec<usize> = od
        .pixels()
        .enumerate()
        .filter(|(_, p)| p.iter().any(|c| *c >= cfg.background_od))
        .map(|(i, _)| i)
        .collect();
    if foreground.is_empty() {
        return Err(Error::DegenerateInput("every pixel is background".into()));
    }
    let v: Vec<[f64; 3]> = foreground.iter().map(|&i| pixel(od, i)).collect();

    let (reference, all_fixed) = match &cfg.fixed_basis {
        Some(b) => (b, true),
        None => (&cfg.reference, false),
    };
    let k = reference.len();
    let fixed: Vec<bool> = reference
        .rows()
        .iter()
        .map(|r| all_fixed || cfg.fixed_rows.contains(&r.name))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w: Vec<[f64; 3]> = reference
        .rows()
        .iter()
        .zip(&fixed)
        .map(|(r, &is_fixed)| {
            let mut row = r.od;
            if !is_fixed {
                for c in &mut row {
                    *c += rng.random_range(0.0..=INIT_NOISE);
                }
            }
            row
        })
        .collect();
    let mut h: Vec<Vec<f64>> = v.iter().map(|vi| initial_concentrations(vi, &w, &mut rng)).collect();

    let mut history = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        update_concentrations(&v, &w, &mut h);
        if fixed.iter().any(|f| !f) {
            update_basis(&v, &mut w, &h, &fixed);
        }
        let obj = objective(&v, &w, &h);
        let done = history
            .last()
            .is_some_and(|&prev: &f64| (prev - obj).abs() <= cfg.tolerance * prev.max(f64::MIN_POSITIVE));
        history.push(obj);
        if done {
            converged = true;
            break;
        }
    }

    // Move row scale into the concentrations so the basis is unit-norm.
    let mut rows = Vec::with_capacity(k);
    for (a, r) in reference.rows().iter().enumerate() {
        let norm = w[a].iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            rows.push(normalize_stain_vector(r.name, w[a])?);
            h.iter_mut().for_each(|hi| hi[a] *= norm);
        } else {
            rows.push(StainVector { name: r.name, od: r.od });
            h.iter_mut().for_each(|hi| hi[a] = 0.0);
        }
    }
    let basis = StainMatrix::new(rows)?;

    let mut planes = vec![vec![0.0; od.pixel_count()]; k];
    for (row, &i) in h.iter().zip(&foreground) {
        for (a, plane) in planes.iter_mut().enumerate() {
            plane[i] = row[a];
        }
    }
    let conc = ConcentrationMap::from_planes(od.width(), od.height(), basis.names(), planes)?;
    Ok(NmfResult {
        basis,
        conc,
        objective_history: history,
        converged,
    })
}

/// Start each pixel almost pure in the row it is most aligned with.
fn initial_concentrations(vi: &[f64; 3], w: &[[f64; 3]], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cos = |r: &[f64; 3]| dot3(vi, r) / dot3(r, r).sqrt().max(EPS);
    let best = (0..w.len()).max_by(|&a, &b| cos(&w[a]).total_cmp(&cos(&w[b]))).unwrap_or(0);
    let scale = (dot3(vi, &w[best]) / dot3(&w[best], &w[best]).max(EPS)).max(EPS);
    (0..w.len())
        .map(|a| {
            let jitter = 1.0 - rng.random::<f64>();
            if a == best {
                scale
            } else {
                INIT_MIX * scale * jitter
            }
        })
        .collect()
}

fn pixel(od: &OdImage, i: usize) -> [f64; 3] {
    let s = &od.as_slice()[i * 3..i * 3 + 3];
    [s[0], s[1], s[2]]
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// H <- H * (V W^T) / (H W W^T + eps)
fn update_concentrations(v: &[[f64; 3]], w: &[[f64; 3]], h: &mut [Vec<f64>]) {
    let k = w.len();
    let wwt: Vec<Vec<f64>> = (0..k).map(|a| (0..k).map(|b| dot3(&w[a], &w[b])).collect()).collect();
    let mut next = vec![0.0; k];
    for (vi, hi) in v.iter().zip(h.iter_mut()) {
        for a in 0..k {
            let numer = dot3(vi, &w[a]);
            let denom: f64 = (0..k).map(|b| hi[b] * wwt[b][a]).sum::<f64>() + EPS;
            next[a] = hi[a] * numer / denom;
        }
        hi.copy_from_slice(&next);
    }
}

/// W <- W * (H^T V) / (H^T H W + eps), free rows only.
fn update_basis(v: &[[f64; 3]], w: &mut [[f64; 3]], h: &[Vec<f64>], fixed: &[bool]) {
    let k = w.len();
    let mut htv = vec![[0.0; 3]; k];
    let mut hth = vec![vec![0.0; k]; k];
    for (vi, hi) in v.iter().zip(h) {
        for a in 0..k {
            for c in 0..3 {
                htv[a][c] += hi[a] * vi[c];
            }
            for b in 0..k {
                hth[a][b] += hi[a] * hi[b];
            }
        }
    }
    let old = w.to_vec();
    for a in (0..k).filter(|&a| !fixed[a]) {
        for c in 0..3 {
            let denom: f64 = (0..k).map(|b| hth[a][b] * old[b][c]).sum::<f64>() + EPS;
            w[a][c] = old[a][c] * htv[a][c] / denom;
        }
    }
}

fn objective(v: &[[f64; 3]], w: &[[f64; 3]], h: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    for (vi, hi) in v.iter().zip(h) {
        for c in 0..3 {
            let approx: f64 = hi.iter().zip(w).map(|(x, row)| x * row[c]).sum();
            let d = vi[c] - approx;
            sum += d * d;
        }
    }
    sum.sqrt()
}

/// Frobenius norm of `od - conc * basis` over every pixel, for arbitrary
/// (not necessarily normalized) basis rows.
pub fn frobenius_error(od: &OdImage, basis: &[[f64; 3]], conc: &ConcentrationMap) -> Result<f64> {
    if basis.len() != conc.plane_count() || conc.pixel_count() != od.pixel_count() {
        return Err(Error::invalid("basis rows, planes and image size must agree"));
    }
    let mut sum = 0.0;
    for (i, p) in od.pixels().enumerate() {
        for (c, pc) in p.iter().enumerate() {
            let approx: f64 = conc.planes().iter().zip(basis).map(|(pl, row)| pl[i] * row[c]).sum();
            sum += (pc - approx).powi(2);
        }
    }
    Ok(sum.sqrt())
}
