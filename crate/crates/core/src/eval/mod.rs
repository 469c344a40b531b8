//! Evaluation: OD-domain stain-intensity histograms, method comparison tables,
//! reader score curves and consensus.

pub mod compare;
pub mod histogram;
pub mod report;
pub mod scores;

pub use compare::{compare_methods, reference_correlation, report_metadata, truth_histogram, ComparisonCell, ComparisonTable, REFERENCE_CORRELATIONS, TABLE_STAINS};
pub use histogram::{histogram_correlation, od_histogram, pearson, HistogramSpec, OdHistogram};
pub use report::write_report;
pub use scores::{
    all_fovs, consensus, median, score_curves, select_fovs, Assay, Category, CategoryScores, CategorySeries, ConsensusRow,
    ConsensusStats, FovKey, ImageArm, ScoreCurves, ScoreRecord,
};
