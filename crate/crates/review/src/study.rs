//! A study on disk: catalog, images and the score log, with the blinded
//! session operations behind the HTTP API.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stainlab_core::eval::{Assay, Category, CategoryScores, ImageArm};
use stainlab_core::seed::{derive_seed, stream};
use stainlab_core::Stain;

use crate::catalog::{is_content_name, Catalog, IMAGE_DIR, LOG_FILE};
use crate::error::{ReviewError, Result};
use crate::log::{consensus_report, ConsensusReport, LogEvent, PairAssignment, ScoreSubmitted, SessionCreated, SessionStatus, StudyState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSession {
    pub reader: String,
    pub assay: Assay,
    pub stain: Stain,
    /// Fields to score, in order; all catalog fields when absent.
    #[serde(default)]
    pub fovs: Option<Vec<u32>>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitScores {
    pub submission_id: String,
    pub pair_id: String,
    pub left: CategoryScores,
    pub right: CategoryScores,
    #[serde(default)]
    pub supersedes: Option<String>,
    #[serde(default)]
    pub submitted_at: Option<String>,
}

/// Session summary returned to its reader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub token: String,
    pub reader: String,
    pub assay: Assay,
    pub stain: Stain,
    pub status: SessionStatus,
    pub cursor: usize,
    pub pair_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub url: String,
}

/// One pair as the reader sees it: two images, no labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairView {
    pub pair_id: String,
    pub index: usize,
    pub left: ImageRef,
    pub right: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NextView {
    pub session_id: String,
    pub status: SessionStatus,
    pub cursor: usize,
    pub pair_count: usize,
    /// `None` once every pair is scored.
    pub pair: Option<PairView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub submission_id: String,
    pub session_id: String,
    pub pair_id: String,
    pub cursor: usize,
    pub status: SessionStatus,
    /// The submission id was already recorded with this payload.
    pub duplicate: bool,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn sha_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

/// Shared service state. Writes go through one log writer; reads share a lock.
#[derive(Debug)]
pub struct Study {
    dir: PathBuf,
    catalog: Catalog,
    state: RwLock<StudyState>,
    log: Mutex<File>,
}

impl Study {
    /// Open a study directory, replaying its log. A torn final line left by
    /// an interrupted write is discarded.
    pub fn open(dir: &Path) -> Result<Self> {
        let catalog = Catalog::load(dir)?;
        let path = dir.join(LOG_FILE);
        let mut text = if path.exists() { std::fs::read_to_string(&path)? } else { String::new() };
        if !text.is_empty() && !text.ends_with('\n') {
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            text.truncate(keep);
            OpenOptions::new().write(true).open(&path)?.set_len(keep as u64)?;
        }
        let state = StudyState::replay(&text)?;
        let log = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            catalog,
            state: RwLock::new(state),
            log: Mutex::new(log),
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Snapshot of the current state.
    pub fn state(&self) -> StudyState {
        self.state.read().expect("state lock").clone()
    }

    /// Build an event from the current state, durably append it, then apply
    /// it. A failed write leaves the state unchanged.
    fn commit(&self, build: impl FnOnce(&StudyState) -> Result<LogEvent>) -> Result<()> {
        let mut log = self.log.lock().expect("log lock");
        let mut state = self.state.write().expect("state lock");
        let event = build(&state)?;
        let mut next = state.clone();
        let mut line = serde_json::to_vec(&event)?;
        line.push(b'\n');
        next.apply(event)?;
        log.write_all(&line)?;
        log.sync_data()?;
        *state = next;
        Ok(())
    }

    fn token(&self, session_id: &str) -> String {
        sha_hex(&[&self.catalog.secret, session_id])[..32].to_string()
    }

    fn check_token(&self, session_id: &str, token: Option<&str>) -> Result<()> {
        if token == Some(self.token(session_id).as_str()) {
            Ok(())
        } else {
            Err(ReviewError::Unauthorized("missing or wrong session token".into()))
        }
    }

    fn view(&self, state: &StudyState, id: &str) -> Result<SessionView> {
        let s = state
            .sessions
            .get(id)
            .ok_or_else(|| ReviewError::NotFound(format!("session {id}")))?;
        Ok(SessionView {
            session_id: id.to_string(),
            token: self.token(id),
            reader: s.created.reader.clone(),
            assay: s.created.assay,
            stain: s.created.stain,
            status: s.status(),
            cursor: s.cursor,
            pair_count: s.created.pairs.len(),
        })
    }

    pub fn create_session(&self, req: &CreateSession) -> Result<SessionView> {
        if req.reader.trim().is_empty() {
            return Err(ReviewError::Invalid("reader must not be empty".into()));
        }
        let available = self.catalog.fovs(req.assay, req.stain);
        if available.is_empty() {
            return Err(ReviewError::NotFound(format!("no images for {} {}", req.assay, req.stain)));
        }
        let fovs = req.fovs.clone().unwrap_or(available);
        if fovs.is_empty() {
            return Err(ReviewError::Invalid("fov selection is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for f in &fovs {
            if !seen.insert(*f) {
                return Err(ReviewError::Invalid(format!("fov {f} selected twice")));
            }
            if self.catalog.find(req.assay, req.stain, *f).is_none() {
                return Err(ReviewError::NotFound(format!("no images for {} {} fov {f}", req.assay, req.stain)));
            }
        }
        let mut session_id = String::new();
        self.commit(|state| {
            let n = state.sessions.len();
            session_id = format!("s{:04}-{}", n + 1, &sha_hex(&[&self.catalog.secret, &n.to_string(), &req.reader])[..8]);
            let pairs = fovs
                .iter()
                .enumerate()
                .map(|(i, fov)| {
                    let left_synthetic = stream(req.seed, "review/left-right", i as u64).random_bool(0.5);
                    PairAssignment {
                        pair_id: format!("{:016x}", derive_seed(req.seed, &format!("review/pair/{session_id}"), i as u64)),
                        fov: *fov,
                        left_arm: Some(if left_synthetic { ImageArm::Synthetic } else { ImageArm::Adjacent }),
                    }
                })
                .collect();
            Ok(LogEvent::SessionCreated(SessionCreated {
                session_id: session_id.clone(),
                reader: req.reader.clone(),
                assay: req.assay,
                stain: req.stain,
                seed: req.seed,
                created_at: now(),
                pairs,
            }))
        })?;
        self.view(&self.state.read().expect("state lock"), &session_id)
    }

    pub fn session(&self, id: &str, token: Option<&str>) -> Result<SessionView> {
        let state = self.state.read().expect("state lock");
        let view = self.view(&state, id)?;
        self.check_token(id, token)?;
        Ok(view)
    }

    pub fn next(&self, id: &str, token: Option<&str>) -> Result<NextView> {
        let state = self.state.read().expect("state lock");
        let s = state
            .sessions
            .get(id)
            .ok_or_else(|| ReviewError::NotFound(format!("session {id}")))?;
        self.check_token(id, token)?;
        let pair = s.created.pairs.get(s.cursor).map(|p| {
            let entry = self
                .catalog
                .find(s.created.assay, s.created.stain, p.fov)
                .expect("sessions only reference catalog fields");
            let left = p.left_arm.expect("live sessions carry arms");
            let right = match left {
                ImageArm::Adjacent => ImageArm::Synthetic,
                ImageArm::Synthetic => ImageArm::Adjacent,
            };
            let url = |arm| ImageRef {
                url: format!("/images/{}", entry.image(arm)),
            };
            PairView {
                pair_id: p.pair_id.clone(),
                index: s.cursor,
                left: url(left),
                right: url(right),
            }
        });
        Ok(NextView {
            session_id: id.to_string(),
            status: s.status(),
            cursor: s.cursor,
            pair_count: s.created.pairs.len(),
            pair,
        })
    }

    pub fn submit(&self, id: &str, token: Option<&str>, req: &SubmitScores) -> Result<Ack> {
        {
            let state = self.state.read().expect("state lock");
            if !state.sessions.contains_key(id) {
                return Err(ReviewError::NotFound(format!("session {id}")));
            }
        }
        self.check_token(id, token)?;
        if req.submission_id.trim().is_empty() {
            return Err(ReviewError::Invalid("submission_id must not be empty".into()));
        }
        for side in [&req.left, &req.right] {
            side.validate().map_err(|e| ReviewError::Invalid(e.to_string()))?;
        }
        let sub = ScoreSubmitted {
            submission_id: req.submission_id.clone(),
            session_id: id.to_string(),
            pair_id: req.pair_id.clone(),
            left: req.left,
            right: req.right,
            supersedes: req.supersedes.clone(),
            submitted_at: req.submitted_at.clone(),
            received_at: now(),
        };
        let mut duplicate = false;
        let result = self.commit(|state| match state.submissions.get(&req.submission_id) {
            Some(prev) if prev.same_payload(&sub) => {
                duplicate = true;
                Err(ReviewError::Conflict(String::new()))
            }
            Some(_) => Err(ReviewError::Conflict(format!(
                "submission {} was already recorded with different content",
                req.submission_id
            ))),
            None => Ok(LogEvent::ScoreSubmitted(sub)),
        });
        if !duplicate {
            result?;
        }
        let state = self.state.read().expect("state lock");
        let s = &state.sessions[id];
        Ok(Ack {
            submission_id: req.submission_id.clone(),
            session_id: id.to_string(),
            pair_id: req.pair_id.clone(),
            cursor: s.cursor,
            status: s.status(),
            duplicate,
        })
    }

    /// Unblinded consensus; refused until every session is complete.
    pub fn consensus(&self, category: Category) -> Result<ConsensusReport> {
        let state = self.state.read().expect("state lock");
        if state.complete_sessions() == 0 {
            return Err(ReviewError::Conflict("no complete sessions".into()));
        }
        if state.open_sessions() > 0 {
            return Err(ReviewError::Conflict(format!(
                "{} session(s) still open; arms stay hidden until all are complete",
                state.open_sessions()
            )));
        }
        consensus_report(&state.score_records(), category, state.complete_sessions())
    }

    pub fn export(&self) -> Result<String> {
        self.state.read().expect("state lock").export()
    }

    pub fn image(&self, name: &str) -> Result<Vec<u8>> {
        if !is_content_name(name) {
            return Err(ReviewError::NotFound(format!("image {name}")));
        }
        let path = self.dir.join(IMAGE_DIR).join(name);
        std::fs::read(&path).map_err(|_| ReviewError::NotFound(format!("image {name}")))
    }
}
