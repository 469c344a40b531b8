//! Append-only study log and the session state rebuilt from it.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use stainlab_core::eval::{all_fovs, consensus, Assay, Category, CategoryScores, ConsensusStats, ImageArm, ScoreRecord};
use stainlab_core::Stain;

use crate::error::{ReviewError, Result};

/// Hidden arm assignment of one pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairAssignment {
    pub pair_id: String,
    pub fov: u32,
    /// Arm shown on the left; omitted from exports while the session is open.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left_arm: Option<ImageArm>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub reader: String,
    pub assay: Assay,
    pub stain: Stain,
    pub seed: u64,
    pub created_at: String,
    pub pairs: Vec<PairAssignment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSubmitted {
    pub submission_id: String,
    pub session_id: String,
    pub pair_id: String,
    pub left: CategoryScores,
    pub right: CategoryScores,
    /// Earlier submission for the same pair that this one replaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<String>,
    /// Client-side timestamp, if sent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submitted_at: Option<String>,
    pub received_at: String,
}

impl ScoreSubmitted {
    /// Same submission apart from the server receipt time.
    pub fn same_payload(&self, other: &ScoreSubmitted) -> bool {
        ScoreSubmitted {
            received_at: String::new(),
            ..self.clone()
        } == ScoreSubmitted {
            received_at: String::new(),
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    SessionCreated(SessionCreated),
    ScoreSubmitted(ScoreSubmitted),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Complete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub created: SessionCreated,
    /// Index of the next unscored pair.
    pub cursor: usize,
    /// Current submission id per pair.
    pub effective: Vec<Option<String>>,
}

impl SessionState {
    pub fn status(&self) -> SessionStatus {
        if self.cursor == self.created.pairs.len() {
            SessionStatus::Complete
        } else {
            SessionStatus::Open
        }
    }

    pub fn pair_index(&self, pair_id: &str) -> Option<usize> {
        self.created.pairs.iter().position(|p| p.pair_id == pair_id)
    }
}

/// Everything derivable from the log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudyState {
    pub sessions: BTreeMap<String, SessionState>,
    pub submissions: HashMap<String, ScoreSubmitted>,
    pub events: Vec<LogEvent>,
}

impl StudyState {
    /// Validate and apply one event.
    pub fn apply(&mut self, event: LogEvent) -> Result<()> {
        match &event {
            LogEvent::SessionCreated(s) => {
                if self.sessions.contains_key(&s.session_id) {
                    return Err(ReviewError::Conflict(format!("session {} already exists", s.session_id)));
                }
                self.sessions.insert(
                    s.session_id.clone(),
                    SessionState {
                        created: s.clone(),
                        cursor: 0,
                        effective: vec![None; s.pairs.len()],
                    },
                );
            }
            LogEvent::ScoreSubmitted(sub) => {
                if self.submissions.contains_key(&sub.submission_id) {
                    return Err(ReviewError::Conflict(format!("submission {} already recorded", sub.submission_id)));
                }
                for side in [&sub.left, &sub.right] {
                    side.validate().map_err(|e| ReviewError::Invalid(e.to_string()))?;
                }
                let session = self
                    .sessions
                    .get_mut(&sub.session_id)
                    .ok_or_else(|| ReviewError::NotFound(format!("session {}", sub.session_id)))?;
                let idx = session
                    .pair_index(&sub.pair_id)
                    .ok_or_else(|| ReviewError::Conflict(format!("pair {} is not part of this session", sub.pair_id)))?;
                match &sub.supersedes {
                    Some(prev) => {
                        if session.effective[idx].as_deref() != Some(prev.as_str()) {
                            return Err(ReviewError::Conflict(format!(
                                "submission {prev} is not the current score for pair {}",
                                sub.pair_id
                            )));
                        }
                    }
                    None => {
                        if session.status() == SessionStatus::Complete {
                            return Err(ReviewError::Conflict("session is complete".into()));
                        }
                        if idx != session.cursor {
                            return Err(ReviewError::Conflict(format!(
                                "pair {} is out of order; next pair is {}",
                                sub.pair_id, session.created.pairs[session.cursor].pair_id
                            )));
                        }
                        session.cursor += 1;
                    }
                }
                session.effective[idx] = Some(sub.submission_id.clone());
                self.submissions.insert(sub.submission_id.clone(), sub.clone());
            }
        }
        self.events.push(event);
        Ok(())
    }

    /// Rebuild state from JSON lines, either the raw log or an export.
    pub fn replay(text: &str) -> Result<Self> {
        let mut state = Self::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let event: LogEvent =
                serde_json::from_str(line).map_err(|e| ReviewError::Corrupt(format!("log line {}: {e}", i + 1)))?;
            state.apply(event)?;
        }
        Ok(state)
    }

    pub fn complete_sessions(&self) -> usize {
        self.sessions.values().filter(|s| s.status() == SessionStatus::Complete).count()
    }

    pub fn open_sessions(&self) -> usize {
        self.sessions.len() - self.complete_sessions()
    }

    /// Current scores of complete sessions, unblinded: two records per pair.
    pub fn score_records(&self) -> Vec<ScoreRecord> {
        let mut out = Vec::new();
        for s in self.sessions.values().filter(|s| s.status() == SessionStatus::Complete) {
            for (pair, sub) in s.created.pairs.iter().zip(&s.effective) {
                let (Some(sub), Some(left_arm)) = (sub, pair.left_arm) else { continue };
                let sub = &self.submissions[sub];
                let right_arm = match left_arm {
                    ImageArm::Adjacent => ImageArm::Synthetic,
                    ImageArm::Synthetic => ImageArm::Adjacent,
                };
                for (arm, scores) in [(left_arm, sub.left), (right_arm, sub.right)] {
                    out.push(ScoreRecord {
                        reader: s.created.reader.clone(),
                        assay: s.created.assay,
                        fov: pair.fov,
                        arm,
                        stain: s.created.stain,
                        scores,
                    });
                }
            }
        }
        out
    }

    /// The log as JSON lines, with arm assignments of open sessions removed.
    pub fn export(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            let line = match e {
                LogEvent::SessionCreated(s) if self.sessions[&s.session_id].status() == SessionStatus::Open => {
                    let mut s = s.clone();
                    for p in &mut s.pairs {
                        p.left_arm = None;
                    }
                    serde_json::to_string(&LogEvent::SessionCreated(s))?
                }
                e => serde_json::to_string(e)?,
            };
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub category: Category,
    pub sessions: usize,
    pub adjacent: ConsensusStats,
    pub synthetic: ConsensusStats,
}

/// Median with min/max across readers for every scored field, per arm.
pub fn consensus_report(records: &[ScoreRecord], category: Category, sessions: usize) -> Result<ConsensusReport> {
    let stats = |arm| consensus(records, category, arm, &all_fovs(records, arm)).map_err(ReviewError::from);
    Ok(ConsensusReport {
        category,
        sessions,
        adjacent: stats(ImageArm::Adjacent)?,
        synthetic: stats(ImageArm::Synthetic)?,
    })
}

/// Consensus computed offline from an exported log. Fails while any session is open.
pub fn consensus_from_log(text: &str, category: Category) -> Result<ConsensusReport> {
    let state = StudyState::replay(text)?;
    if state.sessions.is_empty() || state.open_sessions() > 0 {
        return Err(ReviewError::Conflict("consensus needs every session complete".into()));
    }
    consensus_report(&state.score_records(), category, state.complete_sessions())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(n: u32, w: u32, s: u32) -> CategoryScores {
        CategoryScores {
            no_stain: n,
            weak: w,
            strong_moderate: s,
        }
    }

    fn session(id: &str, reader: &str, arms: &[ImageArm]) -> LogEvent {
        LogEvent::SessionCreated(SessionCreated {
            session_id: id.into(),
            reader: reader.into(),
            assay: Assay::CmetPdl1Egfr,
            stain: Stain::Green,
            seed: 1,
            created_at: "t".into(),
            pairs: arms
                .iter()
                .enumerate()
                .map(|(i, a)| PairAssignment {
                    pair_id: format!("{id}-p{i}"),
                    fov: i as u32,
                    left_arm: Some(*a),
                })
                .collect(),
        })
    }

    fn submit(sub: &str, session: &str, pair: usize, left: CategoryScores, right: CategoryScores) -> LogEvent {
        LogEvent::ScoreSubmitted(ScoreSubmitted {
            submission_id: sub.into(),
            session_id: session.into(),
            pair_id: format!("{session}-p{pair}"),
            left,
            right,
            supersedes: None,
            submitted_at: None,
            received_at: "t".into(),
        })
    }

    #[test]
    fn cursor_order_and_completion() {
        let mut st = StudyState::default();
        st.apply(session("a", "r1", &[ImageArm::Adjacent, ImageArm::Synthetic])).unwrap();
        let err = st.apply(submit("x", "a", 1, scores(100, 0, 0), scores(100, 0, 0))).unwrap_err();
        assert!(matches!(err, ReviewError::Conflict(_)));
        let err = st.apply(submit("x", "a", 0, scores(90, 0, 0), scores(100, 0, 0))).unwrap_err();
        assert!(matches!(err, ReviewError::Invalid(_)));
        st.apply(submit("x", "a", 0, scores(100, 0, 0), scores(100, 0, 0))).unwrap();
        assert_eq!(st.sessions["a"].status(), SessionStatus::Open);
        st.apply(submit("y", "a", 1, scores(100, 0, 0), scores(100, 0, 0))).unwrap();
        assert_eq!(st.sessions["a"].status(), SessionStatus::Complete);
        let err = st.apply(submit("z", "a", 1, scores(100, 0, 0), scores(100, 0, 0))).unwrap_err();
        assert!(matches!(err, ReviewError::Conflict(_)));
    }

    #[test]
    fn supersede_replaces_current_score() {
        let mut st = StudyState::default();
        st.apply(session("a", "r1", &[ImageArm::Synthetic])).unwrap();
        st.apply(submit("x", "a", 0, scores(100, 0, 0), scores(0, 0, 100))).unwrap();
        let mut fix = submit("x2", "a", 0, scores(50, 50, 0), scores(0, 0, 100));
        if let LogEvent::ScoreSubmitted(s) = &mut fix {
            s.supersedes = Some("x".into());
        }
        st.apply(fix.clone()).unwrap();
        let recs = st.score_records();
        assert_eq!(recs.len(), 2);
        let synth = recs.iter().find(|r| r.arm == ImageArm::Synthetic).unwrap();
        assert_eq!(synth.scores, scores(50, 50, 0));
        // Superseding a stale submission is refused.
        if let LogEvent::ScoreSubmitted(s) = &mut fix {
            s.submission_id = "x3".into();
        }
        assert!(matches!(st.apply(fix), Err(ReviewError::Conflict(_))));
        assert_eq!(st.events.len(), 3);
    }

    #[test]
    fn two_readers_median() {
        let mut st = StudyState::default();
        st.apply(session("a", "r1", &[ImageArm::Adjacent])).unwrap();
        st.apply(session("b", "r2", &[ImageArm::Synthetic])).unwrap();
        st.apply(submit("1", "a", 0, scores(60, 0, 40), scores(0, 0, 100))).unwrap();
        st.apply(submit("2", "b", 0, scores(0, 0, 100), scores(40, 0, 60))).unwrap();
        let r = consensus_report(&st.score_records(), Category::StrongModerate, 2).unwrap();
        assert_eq!(r.adjacent.rows.len(), 1);
        assert_eq!(r.adjacent.rows[0].median, 50.0);
        assert_eq!((r.adjacent.rows[0].error_low, r.adjacent.rows[0].error_high), (40.0, 60.0));
        assert_eq!(r.synthetic.rows[0].median, 100.0);
    }

    #[test]
    fn export_redacts_open_sessions_and_replays() {
        let mut st = StudyState::default();
        st.apply(session("a", "r1", &[ImageArm::Adjacent])).unwrap();
        st.apply(session("b", "r2", &[ImageArm::Synthetic, ImageArm::Adjacent])).unwrap();
        st.apply(submit("1", "a", 0, scores(60, 0, 40), scores(0, 0, 100))).unwrap();
        let text = st.export().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].contains("adjacent"));
        assert!(!lines[1].contains("adjacent") && !lines[1].contains("synthetic"));
        let back = StudyState::replay(&text).unwrap();
        assert_eq!(back.open_sessions(), 1);
        assert!(matches!(consensus_from_log(&text, Category::Weak), Err(ReviewError::Conflict(_))));
    }

    #[test]
    fn replay_matches_live_state() {
        let mut st = StudyState::default();
        st.apply(session("a", "r1", &[ImageArm::Adjacent, ImageArm::Synthetic])).unwrap();
        st.apply(submit("1", "a", 0, scores(60, 0, 40), scores(0, 0, 100))).unwrap();
        st.apply(submit("2", "a", 1, scores(10, 20, 70), scores(30, 30, 40))).unwrap();
        let text = st.export().unwrap();
        assert_eq!(StudyState::replay(&text).unwrap(), st);
        let offline = consensus_from_log(&text, Category::StrongModerate).unwrap();
        let live = consensus_report(&st.score_records(), Category::StrongModerate, 1).unwrap();
        assert_eq!(offline, live);
    }
}
