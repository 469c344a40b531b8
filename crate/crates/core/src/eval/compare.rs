use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::histogram::{histogram_correlation, od_histogram, HistogramSpec, OdHistogram};
use super::scores::Assay;
use crate::error::{Error, Result};
use crate::stain::{Stain, StainMatrix};
use crate::synth::EvalPair;
use crate::unmix::SingleplexSynthesizer;

/// Published histogram correlations on real slides, kept for display next to
/// desk-scale results. Columns are QM-Dabsyl, Tamra, Green.
pub const REFERENCE_CORRELATIONS: [(Assay, &str, [f64; 3]); 4] = [
    (Assay::CmetPdl1Egfr, "gan", [0.9980, 0.9997, 0.9864]),
    (Assay::CmetPdl1Egfr, "nmf", [0.9435, 0.9167, 0.8349]),
    (Assay::Cd8Lag3Pdl1, "gan", [0.9837, 0.9971, 0.9864]),
    (Assay::Cd8Lag3Pdl1, "nmf", [0.9712, 0.9789, 0.8056]),
];

/// Stain order of the reference tables.
pub const TABLE_STAINS: [Stain; 3] = [Stain::QmDabsyl, Stain::Tamra, Stain::Green];

pub fn reference_correlation(assay: Assay, method: &str, stain: Stain) -> Option<f64> {
    let col = TABLE_STAINS.iter().position(|s| *s == stain)?;
    REFERENCE_CORRELATIONS
        .iter()
        .find(|(a, m, _)| *a == assay && *m == method)
        .map(|(_, _, v)| v[col])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub method: String,
    pub stain: Stain,
    /// `None` when a histogram has zero variance.
    pub correlation: Option<f64>,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub assay: Assay,
    pub histogram: HistogramSpec,
    pub eval_fovs: usize,
    /// Evaluation choices recorded with every report.
    pub metadata: BTreeMap<String, String>,
    pub cells: Vec<ComparisonCell>,
}

pub fn report_metadata(spec: &HistogramSpec) -> BTreeMap<String, String> {
    BTreeMap::from([
        (
            "binning".to_string(),
            format!("{} bins over [{}, {}]", spec.bins, spec.range.0, spec.range.1),
        ),
        (
            "background_exclusion".to_string(),
            format!("projection < {}", spec.background_threshold),
        ),
        ("intensity_scalar".to_string(), "dot(pixel OD, unit stain vector)".to_string()),
        ("region".to_string(), "whole field, histograms pooled over evaluation FOVs".to_string()),
        ("score_scale".to_string(), "percent of tumor cells per category, summing to 100".to_string()),
        ("error_bars".to_string(), "min/max across readers".to_string()),
    ])
}

impl ComparisonTable {
    pub fn get(&self, method: &str, stain: Stain) -> Option<&ComparisonCell> {
        self.cells.iter().find(|c| c.method == method && c.stain == stain)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["assay", "method", "stain", "correlation", "reference"])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
        for c in &self.cells {
            w.write_record([
                self.assay.name().to_string(),
                c.method.clone(),
                c.stain.name().to_string(),
                opt(c.correlation),
                opt(c.reference),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }

    /// Plain-text table with one row per method and one column per stain.
    pub fn to_text(&self) -> String {
        let mut stains: Vec<Stain> = Vec::new();
        let mut methods: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !stains.contains(&c.stain) {
                stains.push(c.stain);
            }
            if !methods.contains(&c.method.as_str()) {
                methods.push(&c.method);
            }
        }
        let mut out = format!("Histogram correlation, {}\n{:<10}", self.assay, "method");
        for s in &stains {
            let _ = write!(out, " {:>18}", s.name());
        }
        out.push('\n');
        for m in methods {
            let _ = write!(out, "{m:<10}");
            for s in &stains {
                let c = self.get(m, *s).expect("cell");
                let got = c.correlation.map_or("undefined".to_string(), |v| format!("{v:.4}"));
                let cell = match c.reference {
                    Some(r) => format!("{got} (ref {r:.4})"),
                    None => got,
                };
                let _ = write!(out, " {cell:>18}");
            }
            out.push('\n');
        }
        out
    }
}

/// Histogram of the ground-truth singleplex for `stain`, pooled over pairs.
pub fn truth_histogram(pairs: &[EvalPair], stains: &StainMatrix, stain: Stain, spec: &HistogramSpec) -> Result<OdHistogram> {
    let v = stains
        .get(stain)
        .ok_or_else(|| Error::invalid(format!("no stain vector for {stain}")))?;
    let mut h = OdHistogram::empty(spec, stain.name(), "ground-truth")?;
    for p in pairs {
        let img = p
            .singleplex
            .get(&stain)
            .ok_or_else(|| Error::invalid(format!("evaluation field {} lacks a {stain} singleplex", p.fov)))?;
        h.merge(&od_histogram(img, v, spec, "ground-truth")?)?;
    }
    Ok(h)
}

/// Histogram correlation of each method's synthetic singleplex against ground
/// truth, per stain, with one shared binning.
pub fn compare_methods(
    pairs: &[EvalPair],
    stains: &StainMatrix,
    methods: &[&dyn SingleplexSynthesizer],
    markers: &[Stain],
    spec: &HistogramSpec,
    assay: Assay,
) -> Result<ComparisonTable> {
    if pairs.is_empty() {
        return Err(Error::invalid("no evaluation pairs"));
    }
    let truth: Vec<OdHistogram> = markers
        .iter()
        .map(|s| truth_histogram(pairs, stains, *s, spec))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for method in methods {
        let mut hists: Vec<OdHistogram> = markers
            .iter()
            .map(|s| OdHistogram::empty(spec, s.name(), method.method()))
            .collect::<Result<_>>()?;
        for p in pairs {
            let images = method.synthesize_all(&p.triplex, markers)?;
            for ((img, s), h) in images.iter().zip(markers).zip(&mut hists) {
                h.merge(&od_histogram(img, stains.get(*s).expect("checked"), spec, method.method())?)?;
            }
        }
        for ((h, t), s) in hists.iter().zip(&truth).zip(markers) {
            let correlation = match histogram_correlation(h, t) {
                Ok(r) => Some(r),
                Err(Error::CorrelationUndefined(_)) => None,
                Err(e) => return Err(e),
            };
            cells.push(ComparisonCell {
                method: method.method().to_string(),
                stain: *s,
                correlation,
                reference: reference_correlation(assay, method.method(), *s),
            });
        }
    }
    Ok(ComparisonTable {
        assay,
        histogram: *spec,
        eval_fovs: pairs.len(),
        metadata: report_metadata(spec),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_dataset, DatasetConfig, FovSpec};
    use crate::unmix::{LinearOptions, LinearSynthesizer, NmfConfig, NmfSynthesizer};
    use image::RgbImage;

    #[test]
    fn reference_values() {
        assert_eq!(reference_correlation(Assay::CmetPdl1Egfr, "gan", Stain::QmDabsyl), Some(0.9980));
        assert_eq!(reference_correlation(Assay::CmetPdl1Egfr, "gan", Stain::Tamra), Some(0.9997));
        assert_eq!(reference_correlation(Assay::CmetPdl1Egfr, "nmf", Stain::Green), Some(0.8349));
        assert_eq!(reference_correlation(Assay::Cd8Lag3Pdl1, "gan", Stain::QmDabsyl), Some(0.9837));
        assert_eq!(reference_correlation(Assay::Cd8Lag3Pdl1, "nmf", Stain::Tamra), Some(0.9789));
        assert_eq!(reference_correlation(Assay::Cd8Lag3Pdl1, "nmf", Stain::Green), Some(0.8056));
        assert_eq!(reference_correlation(Assay::Cd8Lag3Pdl1, "linear", Stain::Green), None);
    }

    fn small_pairs() -> (Vec<EvalPair>, StainMatrix) {
        let cfg = DatasetConfig {
            fov: FovSpec {
                width: 96,
                height: 96,
                seed: 3,
                ..FovSpec::default()
            },
            n_fovs: 0,
            n_eval_fovs: 2,
            ..DatasetConfig::default()
        };
        let ds = build_dataset(&cfg).unwrap();
        (ds.eval, cfg.stains)
    }

    #[test]
    fn table_shape_and_shared_binning() {
        let (pairs, stains) = small_pairs();
        let nmf = NmfSynthesizer {
            config: NmfConfig {
                max_iters: 50,
                ..NmfConfig::default()
            },
        };
        let lin = LinearSynthesizer {
            stains: stains.subset(&[Stain::Tamra, Stain::QmDabsyl, Stain::Hematoxylin]).unwrap(),
            options: LinearOptions::default(),
        };
        let methods: [&dyn SingleplexSynthesizer; 2] = [&nmf, &lin];
        let spec = HistogramSpec::default();
        let t = compare_methods(&pairs, &stains, &methods, &[Stain::QmDabsyl, Stain::Tamra], &spec, Assay::CmetPdl1Egfr)
            .unwrap();
        assert_eq!(t.cells.len(), 4);
        assert_eq!(t.histogram, spec);
        assert!(t.metadata.contains_key("binning"));
        assert!(t.to_csv().unwrap().lines().count() == 5);
        assert!(t.to_text().contains("nmf"));
    }

    #[test]
    fn truth_against_itself_is_one() {
        let (pairs, stains) = small_pairs();
        struct Truth<'a>(&'a [EvalPair]);
        impl SingleplexSynthesizer for Truth<'_> {
            fn method(&self) -> &str {
                "gan"
            }
            fn synthesize(&self, triplex: &RgbImage, stain: Stain) -> Result<RgbImage> {
                let p = self.0.iter().find(|p| &p.triplex == triplex).unwrap();
                Ok(p.singleplex[&stain].clone())
            }
        }
        let t = compare_methods(
            &pairs,
            &stains,
            &[&Truth(&pairs)],
            &Stain::MARKERS,
            &HistogramSpec::default(),
            Assay::Cd8Lag3Pdl1,
        )
        .unwrap();
        assert_eq!(t.cells.len(), 3);
        for c in &t.cells {
            assert!((c.correlation.unwrap() - 1.0).abs() < 1e-12);
            assert!(c.reference.is_some());
        }
    }
}
