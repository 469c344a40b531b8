//! Blinded reader-study service: serves adjacent and synthetic singleplex
//! images side by side without labels, records category scores in an
//! append-only log and reports cross-reader consensus once every session is
//! complete.

mod api;
mod catalog;
mod error;
mod log;
mod study;

pub use api::{router, serve, TOKEN_HEADER};
pub use catalog::{content_name, is_content_name, Catalog, CatalogEntry, StudyBuilder, CATALOG_FILE, IMAGE_DIR, LOG_FILE};
pub use error::{Result, ReviewError};
pub use log::{
    consensus_from_log, consensus_report, ConsensusReport, LogEvent, PairAssignment, ScoreSubmitted, SessionCreated,
    SessionState, SessionStatus, StudyState,
};
pub use study::{Ack, CreateSession, ImageRef, NextView, PairView, SessionView, Study, SubmitScores};
