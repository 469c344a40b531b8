//! Reader scores: per-category curves for adjacent versus synthetic images and
//! cross-reader consensus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::stain::Stain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Assay {
    #[serde(rename = "cMET-PDL1-EGFR")]
    CmetPdl1Egfr,
    #[serde(rename = "CD8-LAG3-PDL1")]
    Cd8Lag3Pdl1,
}

impl Assay {
    pub const ALL: [Assay; 2] = [Assay::CmetPdl1Egfr, Assay::Cd8Lag3Pdl1];

    pub fn name(self) -> &'static str {
        match self {
            Assay::CmetPdl1Egfr => "cMET-PDL1-EGFR",
            Assay::Cd8Lag3Pdl1 => "CD8-LAG3-PDL1",
        }
    }
}

impl fmt::Display for Assay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Assay {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = s.to_ascii_lowercase().replace('_', "-");
        match k.as_str() {
            "cmet-pdl1-egfr" | "cmet" => Ok(Assay::CmetPdl1Egfr),
            "cd8-lag3-pdl1" | "cd8" => Ok(Assay::Cd8Lag3Pdl1),
            _ => Err(Error::invalid(format!("unknown assay {s:?}"))),
        }
    }
}

/// Which image of a pair a score refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageArm {
    Adjacent,
    Synthetic,
}

impl ImageArm {
    pub fn name(self) -> &'static str {
        match self {
            ImageArm::Adjacent => "adjacent",
            ImageArm::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    NoStain,
    Weak,
    StrongModerate,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::NoStain, Category::Weak, Category::StrongModerate];

    pub fn name(self) -> &'static str {
        match self {
            Category::NoStain => "no_stain",
            Category::Weak => "weak",
            Category::StrongModerate => "strong_moderate",
        }
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown category {s:?}")))
    }
}

/// Percent of tumor cells in each intensity category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub no_stain: u32,
    pub weak: u32,
    pub strong_moderate: u32,
}

impl CategoryScores {
    pub fn validate(&self) -> Result<()> {
        let sum = u64::from(self.no_stain) + u64::from(self.weak) + u64::from(self.strong_moderate);
        if sum != 100 {
            return Err(Error::invalid(format!("category scores sum to {sum}, expected 100")));
        }
        Ok(())
    }

    pub fn get(&self, c: Category) -> u32 {
        match c {
            Category::NoStain => self.no_stain,
            Category::Weak => self.weak,
            Category::StrongModerate => self.strong_moderate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub reader: String,
    pub assay: Assay,
    pub fov: u32,
    pub arm: ImageArm,
    pub stain: Stain,
    pub scores: CategoryScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FovKey {
    pub assay: Assay,
    pub stain: Stain,
    pub fov: u32,
}

impl ScoreRecord {
    pub fn key(&self) -> FovKey {
        FovKey {
            assay: self.assay,
            stain: self.stain,
            fov: self.fov,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySeries {
    pub category: Category,
    /// One value per FOV in `ScoreCurves::fovs`, averaged over readers; `None` when that arm is missing.
    pub adjacent: Vec<Option<f64>>,
    pub synthetic: Vec<Option<f64>>,
    /// Mean |adjacent - synthetic| over FOVs that have both arms.
    pub mean_abs_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCurves {
    pub assay: Assay,
    pub stain: Stain,
    pub reader: Option<String>,
    pub fovs: Vec<u32>,
    /// FOVs where one arm has no score.
    pub partial: Vec<u32>,
    pub series: Vec<CategorySeries>,
}

/// Per-category adjacent and synthetic series ordered by FOV. With `reader`
/// set only that reader's records are used.
pub fn score_curves(records: &[ScoreRecord], stain: Stain, assay: Assay, reader: Option<&str>) -> ScoreCurves {
    let mut sums: BTreeMap<(u32, ImageArm), ([f64; 3], usize)> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.stain == stain && r.assay == assay && reader.is_none_or(|id| r.reader == id))
    {
        let e = sums.entry((r.fov, r.arm)).or_insert(([0.0; 3], 0));
        for (i, c) in Category::ALL.iter().enumerate() {
            e.0[i] += f64::from(r.scores.get(*c));
        }
        e.1 += 1;
    }
    let fovs: Vec<u32> = sums.keys().map(|(f, _)| *f).collect::<BTreeSet<_>>().into_iter().collect();
    let partial = fovs
        .iter()
        .copied()
        .filter(|f| !(sums.contains_key(&(*f, ImageArm::Adjacent)) && sums.contains_key(&(*f, ImageArm::Synthetic))))
        .collect();
    let value = |fov: u32, arm: ImageArm, i: usize| sums.get(&(fov, arm)).map(|(s, n)| s[i] / *n as f64);
    let series = Category::ALL
        .iter()
        .enumerate()
        .map(|(i, &category)| {
            let adjacent: Vec<Option<f64>> = fovs.iter().map(|f| value(*f, ImageArm::Adjacent, i)).collect();
            let synthetic: Vec<Option<f64>> = fovs.iter().map(|f| value(*f, ImageArm::Synthetic, i)).collect();
            let gaps: Vec<f64> = adjacent
                .iter()
                .zip(&synthetic)
                .filter_map(|(a, s)| Some((a.as_ref()? - s.as_ref()?).abs()))
                .collect();
            let mean_abs_gap = (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64);
            CategorySeries {
                category,
                adjacent,
                synthetic,
                mean_abs_gap,
            }
        })
        .collect();
    ScoreCurves {
        assay,
        stain,
        reader: reader.map(str::to_string),
        fovs,
        partial,
        series,
    }
}

impl ScoreCurves {
    /// Long-format plot data with columns fov, arm, category, value.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fov", "arm", "category", "value"])?;
        for s in &self.series {
            for (i, fov) in self.fovs.iter().enumerate() {
                for (arm, v) in [(ImageArm::Adjacent, s.adjacent[i]), (ImageArm::Synthetic, s.synthetic[i])] {
                    if let Some(v) = v {
                        w.write_record([fov.to_string(), arm.name().into(), s.category.name().into(), v.to_string()])?;
                    }
                }
            }
        }
        csv_string(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRow {
    pub assay: Assay,
    pub stain: Stain,
    pub fov: u32,
    pub median: f64,
    /// Minimum across readers.
    pub error_low: f64,
    /// Maximum across readers.
    pub error_high: f64,
    pub readers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusStats {
    pub category: Category,
    pub arm: ImageArm,
    pub rows: Vec<ConsensusRow>,
}

impl ConsensusStats {
    /// Plot data with columns assay, stain, fov, median, lo, hi.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["assay", "stain", "fov", "median", "lo", "hi"])?;
        for r in &self.rows {
            w.write_record([
                r.assay.name().to_string(),
                r.stain.name().to_string(),
                r.fov.to_string(),
                r.median.to_string(),
                r.error_low.to_string(),
                r.error_high.to_string(),
            ])?;
        }
        csv_string(w)
    }
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Median across readers with min/max bars for each selected FOV, in selection order.
pub fn consensus(records: &[ScoreRecord], category: Category, arm: ImageArm, selection: &[FovKey]) -> Result<ConsensusStats> {
    if selection.is_empty() {
        return Err(Error::invalid("consensus selection is empty"));
    }
    let mut by_key: BTreeMap<FovKey, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.arm == arm) {
        by_key.entry(r.key()).or_default().push(f64::from(r.scores.get(category)));
    }
    let rows = selection
        .iter()
        .map(|k| {
            let vals = by_key
                .get(k)
                .ok_or_else(|| Error::invalid(format!("no {} scores for {} {} fov {}", arm.name(), k.assay, k.stain, k.fov)))?;
            Ok(ConsensusRow {
                assay: k.assay,
                stain: k.stain,
                fov: k.fov,
                median: median(vals).expect("nonempty"),
                error_low: vals.iter().copied().fold(f64::INFINITY, f64::min),
                error_high: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                readers: vals.len(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConsensusStats { category, arm, rows })
}

/// Seeded random choice of up to `per_assay` scored FOVs of `arm` from each assay, sorted.
pub fn select_fovs(records: &[ScoreRecord], arm: ImageArm, per_assay: usize, seed: u64) -> Vec<FovKey> {
    let mut out = Vec::new();
    for (i, assay) in Assay::ALL.into_iter().enumerate() {
        let mut keys: Vec<FovKey> = records
            .iter()
            .filter(|r| r.arm == arm && r.assay == assay)
            .map(ScoreRecord::key)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        keys.shuffle(&mut seed::stream(seed, "consensus-selection", i as u64));
        keys.truncate(per_assay);
        out.extend(keys);
    }
    out.sort();
    out
}

/// Every FOV scored on `arm`, sorted.
pub fn all_fovs(records: &[ScoreRecord], arm: ImageArm) -> Vec<FovKey> {
    records
        .iter()
        .filter(|r| r.arm == arm)
        .map(ScoreRecord::key)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
