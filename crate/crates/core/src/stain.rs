//! Stain identities and their optical-density absorption directions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on the condition number of a matrix used for linear deconvolution.
pub const MAX_CONDITION: f64 = 1e6;

/// The four chromogens of a triplex assay: three membrane markers plus the
/// hematoxylin counterstain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stain {
    Tamra,
    #[serde(rename = "QM-Dabsyl")]
    QmDabsyl,
    Green,
    Hematoxylin,
}

impl Stain {
    /// Marker stains in canonical order (m1, m2, m3).
    pub const MARKERS: [Stain; 3] = [Stain::Tamra, Stain::QmDabsyl, Stain::Green];
    pub const ALL: [Stain; 4] = [Stain::Tamra, Stain::QmDabsyl, Stain::Green, Stain::Hematoxylin];

    pub fn name(self) -> &'static str {
        match self {
            Stain::Tamra => "Tamra",
            Stain::QmDabsyl => "QM-Dabsyl",
            Stain::Green => "Green",
            Stain::Hematoxylin => "Hematoxylin",
        }
    }

    /// Lowercase identifier usable in file names.
    pub fn slug(self) -> &'static str {
        match self {
            Stain::Tamra => "tamra",
            Stain::QmDabsyl => "dabsyl",
            Stain::Green => "green",
            Stain::Hematoxylin => "hematoxylin",
        }
    }

    pub fn is_marker(self) -> bool {
        self != Stain::Hematoxylin
    }

    /// Position among [`Stain::MARKERS`], `None` for the counterstain.
    pub fn marker_index(self) -> Option<usize> {
        Stain::MARKERS.iter().position(|&m| m == self)
    }
}

impl fmt::Display for Stain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "tamra" | "purple" | "m1" => Ok(Stain::Tamra),
            "qm-dabsyl" | "dabsyl" | "qmdabsyl" | "yellow" | "m2" => Ok(Stain::QmDabsyl),
            "green" | "m3" => Ok(Stain::Green),
            "hematoxylin" | "haematoxylin" | "hema" | "h" => Ok(Stain::Hematoxylin),
            other => Err(Error::invalid(format!("unknown stain name '{other}'"))),
        }
    }
}

/// A unit-norm optical-density absorption direction for one stain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainVector {
    pub name: Stain,
    pub od: [f64; 3],
}

impl StainVector {
    pub fn dot(&self, od: [f64; 3]) -> f64 {
        self.od[0] * od[0] + self.od[1] * od[1] + self.od[2] * od[2]
    }
}

/// Scale a nonnegative absorption vector to unit Euclidean norm.
pub fn normalize_stain_vector(name: Stain, v: [f64; 3]) -> Result<StainVector> {
    if v.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::invalid(format!(
            "stain vector for {name} must have finite nonnegative components, got {v:?}"
        )));
    }
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm == 0.0 {
        return Err(Error::invalid(format!("stain vector for {name} is zero")));
    }
    Ok(StainVector {
        name,
        od: [v[0] / norm, v[1] / norm, v[2] / norm],
    })
}

/// Ordered set of stain vectors (1 to 4 rows, unique names).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StainMatrix {
    stains: Vec<StainVector>,
}

#[derive(Deserialize)]
struct StainMatrixDoc {
    stains: Vec<StainVector>,
}

impl<'de> Deserialize<'de> for StainMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = StainMatrixDoc::deserialize(d)?;
        // Rows that are already unit-norm are kept bit-for-bit.
        let rows = doc
            .stains
            .into_iter()
            .map(|s| {
                let norm = s.od.iter().map(|c| c * c).sum::<f64>().sqrt();
                if (norm - 1.0).abs() <= 1e-12 && s.od.iter().all(|c| *c >= 0.0) {
                    Ok(s)
                } else {
                    normalize_stain_vector(s.name, s.od)
                }
            })
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        StainMatrix::new(rows).map_err(serde::de::Error::custom)
    }
}

impl StainMatrix {
    /// Build from raw (not necessarily normalized) vectors.
    pub fn from_raw(rows: Vec<(Stain, [f64; 3])>) -> Result<Self> {
        let stains = rows
            .into_iter()
            .map(|(name, v)| normalize_stain_vector(name, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(stains)
    }

    pub fn new(stains: Vec<StainVector>) -> Result<Self> {
        if stains.is_empty() || stains.len() > 4 {
            return Err(Error::invalid(format!(
                "stain matrix needs 1 to 4 rows, got {}",
                stains.len()
            )));
        }
        for (i, s) in stains.iter().enumerate() {
            if stains[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::invalid(format!("duplicate stain row {}", s.name)));
            }
            let norm = s.od.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 || s.od.iter().any(|c| *c < 0.0) {
                return Err(Error::invalid(format!(
                    "stain row {} must be a nonnegative unit vector (norm {norm})",
                    s.name
                )));
            }
        }
        Ok(Self { stains })
    }

    /// Placeholder absorption directions for the three chromogen analogues and
    /// hematoxylin. Replace with calibrated vectors through a JSON file.
    pub fn default_triplex() -> Self {
        Self::from_raw(vec![
            (Stain::Tamra, [0.580, 0.680, 0.450]),
            (Stain::QmDabsyl, [0.100, 0.300, 0.950]),
            (Stain::Green, [0.620, 0.180, 0.760]),
            (Stain::Hematoxylin, [0.650, 0.704, 0.286]),
        ])
        .expect("default stain vectors are valid")
    }

    pub fn rows(&self) -> &[StainVector] {
        &self.stains
    }

    pub fn len(&self) -> usize {
        self.stains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stains.is_empty()
    }

    pub fn names(&self) -> Vec<Stain> {
        self.stains.iter().map(|s| s.name).collect()
    }

    pub fn index_of(&self, stain: Stain) -> Option<usize> {
        self.stains.iter().position(|s| s.name == stain)
    }

    pub fn get(&self, stain: Stain) -> Option<&StainVector> {
        self.stains.iter().find(|s| s.name == stain)
    }

    /// Keep only the named rows, in the order given.
    pub fn subset(&self, names: &[Stain]) -> Result<Self> {
        let rows = names
            .iter()
            .map(|&n| {
                self.get(n)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("stain {n} not in matrix")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }

    /// Rows as a k x 3 matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), 3, |r, c| self.stains[r].od[c])
    }

    /// Ratio of largest to smallest singular value of the k x 3 row matrix.
    /// Infinite when the rows are linearly dependent.
    pub fn condition_number(&self) -> f64 {
        let sv = self.to_matrix().singular_values();
        let max = sv.max();
        let min = sv.min();
        if min <= f64::EPSILON * max {
            f64::INFINITY
        } else {
            max / min
        }
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stain matrix serializes")
    }
}
