use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Val,
}

/// Train/test/validation proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: f64,
    pub test: f64,
    pub val: f64,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 0.8,
            test: 0.1,
            val: 0.1,
        }
    }
}

impl SplitRatio {
    /// Largest-remainder apportionment of `count` items; ties favour train, then test.
    pub fn counts(&self, count: usize) -> Result<[usize; 3]> {
        let weights = [self.train, self.test, self.val];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("split ratios must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("split ratios must not all be zero"));
        }
        let quotas: Vec<f64> = weights.iter().map(|w| count as f64 * w / total).collect();
        let mut out = [0usize; 3];
        for (o, q) in out.iter_mut().zip(&quotas) {
            *o = q.floor() as usize;
        }
        let mut remaining = count - out.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if remaining == 0 {
                break;
            }
            out[i] += 1;
            remaining -= 1;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub fov: u32,
    pub origin: (u32, u32),
    pub size: u32,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn split_sizes(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for p in &self.patches {
            out[p.split as usize] += 1;
        }
        out
    }
}

/// Seeded uniform crops of a `fov_size` field. Crops may overlap.
pub fn extract_patches(
    fov: u32,
    fov_size: (u32, u32),
    count: usize,
    size: u32,
    seed: u64,
    ratio: SplitRatio,
) -> Result<PatchSet> {
    if size == 0 || size > fov_size.0.min(fov_size.1) {
        return Err(Error::invalid(format!(
            "patch size {size} must be in 1..={} for a {}x{} field",
            fov_size.0.min(fov_size.1),
            fov_size.0,
            fov_size.1
        )));
    }
    let [train, test, val] = ratio.counts(count)?;
    let mut labels: Vec<Split> = std::iter::repeat_n(Split::Train, train)
        .chain(std::iter::repeat_n(Split::Test, test))
        .chain(std::iter::repeat_n(Split::Val, val))
        .collect();
    let mut rng = seed::stream(seed, "patches", u64::from(fov));
    labels.shuffle(&mut rng);
    let patches = labels
        .into_iter()
        .map(|split| Patch {
            fov,
            origin: (
                rng.random_range(0..=fov_size.0 - size),
                rng.random_range(0..=fov_size.1 - size),
            ),
            size,
            split,
        })
        .collect();
    Ok(PatchSet { patches })
}
