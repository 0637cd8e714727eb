//! Session state and the append-only response log.
//!
//! The log is the source of truth. Every acked response is one JSON line,
//! written and synced before the ack. On startup the log is replayed to
//! rebuild each rater's cursor; an unfinished final line (a crash between
//! write and sync) is truncated away.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use vessel_agreement::patches::{Circle, RatingItem, RatingSet};
use vessel_agreement::rating::{Answer, RatingResponse};

use crate::ServiceError;

/// Names of files kept next to each other in the log directory.
pub const RESPONSE_LOG: &str = "responses.jsonl";
pub const SESSION_LOG: &str = "sessions.jsonl";

fn digest(seed: u64, rater_id: &str) -> [u8; 32] {
    Sha256::digest(format!("{seed}|{rater_id}").as_bytes()).into()
}

/// Session id for a rater: stable across restarts for a given rating set.
pub fn session_id(seed: u64, rater_id: &str) -> String {
    digest(seed, rater_id)[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Presentation order for a rater, a permutation of item indices that
/// depends only on the rating-set seed and the rater id.
pub fn item_order(seed: u64, rater_id: &str, n_items: usize) -> Vec<usize> {
    let d = digest(seed, rater_id);
    let mut key = [0u8; 32];
    key.copy_from_slice(&d);
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut order: Vec<usize> = (0..n_items).collect();
    order.shuffle(&mut rng);
    order
}

pub fn valid_rater_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Progress {
    pub answered: usize,
    pub total: usize,
}

/// What a rater sees for one item. Category, annotator and duplicate
/// metadata are deliberately absent.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ItemPayload {
    pub item_id: String,
    pub image: String,
    pub circle: Circle,
    pub question: String,
    pub progress: Progress,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(untagged)]
pub enum NextItem {
    Item(ItemPayload),
    Done { done: bool, progress: Progress },
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SessionInfo {
    pub session_id: String,
    pub rater_id: String,
    pub progress: Progress,
}

#[derive(Debug)]
struct Session {
    rater_id: String,
    order: Vec<usize>,
    answered: HashSet<usize>,
    cursor: usize,
}

impl Session {
    fn advance(&mut self) {
        while self.cursor < self.order.len() && self.answered.contains(&self.order[self.cursor]) {
            self.cursor += 1;
        }
    }
}

#[derive(Debug, PartialEq)]
pub enum SubmitError {
    UnknownSession,
    InvalidAnswer(String),
    AlreadyAnswered(String),
    OutOfOrder {
        expected: Option<String>,
        got: String,
    },
}

/// Appends a line and syncs it to disk before returning.
fn append_line(file: &mut File, line: &str) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(line.len() + 1);
    buf.extend_from_slice(line.as_bytes());
    buf.push(b'\n');
    file.write_all(&buf)?;
    file.flush()?;
    file.sync_data()
}

/// Opens an append-only JSONL file, dropping an unfinished last line, and
/// returns the complete lines.
fn open_log(path: &Path) -> Result<(File, Vec<String>), ServiceError> {
    let io = |e| ServiceError::Io(path.to_path_buf(), e);
    let mut file = OpenOptions::new()
        .read(true)
        .append(true)
        .create(true)
        .open(path)
        .map_err(io)?;
    let mut text = String::new();
    file.read_to_string(&mut text).map_err(io)?;
    let keep = text.rfind('\n').map_or(0, |i| i + 1);
    if keep < text.len() {
        log::warn!(
            "{}: dropping {} bytes of unfinished record",
            path.display(),
            text.len() - keep
        );
        file.set_len(keep as u64).map_err(io)?;
        file.sync_data().map_err(io)?;
        file.seek(SeekFrom::End(0)).map_err(io)?;
    }
    let lines = text[..keep]
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    Ok((file, lines))
}

#[derive(serde::Deserialize, Serialize)]
struct SessionRecord {
    rater_id: String,
}

pub struct Store {
    set: RatingSet,
    index: HashMap<String, usize>,
    sessions: HashMap<String, Session>,
    log: File,
    session_log: File,
    log_lines: Vec<String>,
    log_path: PathBuf,
}

impl Store {
    /// Opens (or creates) the logs in `log_dir` and replays them.
    pub fn open(set: RatingSet, log_dir: &Path) -> Result<Store, ServiceError> {
        std::fs::create_dir_all(log_dir).map_err(|e| ServiceError::Io(log_dir.to_path_buf(), e))?;
        let index = set
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.item_id.clone(), i))
            .collect();
        let log_path = log_dir.join(RESPONSE_LOG);
        let (log, log_lines) = open_log(&log_path)?;
        let (session_log, session_lines) = open_log(&log_dir.join(SESSION_LOG))?;
        let mut store = Store {
            set,
            index,
            sessions: HashMap::new(),
            log,
            session_log,
            log_lines: Vec::new(),
            log_path,
        };
        for line in &session_lines {
            let rec: SessionRecord = serde_json::from_str(line).map_err(ServiceError::Corrupt)?;
            store.ensure_session(&rec.rater_id);
        }
        for line in log_lines {
            let r: RatingResponse = serde_json::from_str(&line).map_err(ServiceError::Corrupt)?;
            let idx = *store
                .index
                .get(&r.item_id)
                .ok_or_else(|| ServiceError::UnknownItem(r.item_id.clone()))?;
            let id = store.ensure_session(&r.rater_id);
            let s = store.sessions.get_mut(&id).expect("session just ensured");
            s.answered.insert(idx);
            s.advance();
            store.log_lines.push(line);
        }
        Ok(store)
    }

    pub fn rating_set(&self) -> &RatingSet {
        &self.set
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    fn ensure_session(&mut self, rater_id: &str) -> String {
        let id = session_id(self.set.seed, rater_id);
        let n = self.set.items.len();
        let seed = self.set.seed;
        self.sessions.entry(id.clone()).or_insert_with(|| Session {
            rater_id: rater_id.to_string(),
            order: item_order(seed, rater_id, n),
            answered: HashSet::new(),
            cursor: 0,
        });
        id
    }

    fn progress(&self, s: &Session) -> Progress {
        Progress {
            answered: s.answered.len(),
            total: s.order.len(),
        }
    }

    /// Creates or resumes the session of a rater.
    pub fn open_session(&mut self, rater_id: &str) -> std::io::Result<SessionInfo> {
        let id = session_id(self.set.seed, rater_id);
        if !self.sessions.contains_key(&id) {
            let line = serde_json::to_string(&SessionRecord {
                rater_id: rater_id.to_string(),
            })
            .expect("serializable");
            append_line(&mut self.session_log, &line)?;
            self.ensure_session(rater_id);
        }
        let s = &self.sessions[&id];
        Ok(SessionInfo {
            session_id: id,
            rater_id: s.rater_id.clone(),
            progress: self.progress(s),
        })
    }

    fn payload(&self, item: &RatingItem, progress: Progress) -> ItemPayload {
        ItemPayload {
            item_id: item.item_id.clone(),
            image: format!("/patches/{}.png", item.image_ref),
            circle: item.circle,
            question: item.question.clone(),
            progress,
        }
    }

    pub fn next_item(&self, session_id: &str) -> Option<NextItem> {
        let s = self.sessions.get(session_id)?;
        let progress = self.progress(s);
        Some(match s.order.get(s.cursor) {
            Some(&idx) => NextItem::Item(self.payload(&self.set.items[idx], progress)),
            None => NextItem::Done {
                done: true,
                progress,
            },
        })
    }

    /// Validates and durably records a response; returns the new progress.
    pub fn submit(
        &mut self,
        session_id: &str,
        item_id: &str,
        answer: &str,
    ) -> Result<Progress, SubmitOutcome> {
        let s = self
            .sessions
            .get(session_id)
            .ok_or(SubmitOutcome::Rejected(SubmitError::UnknownSession))?;
        let answer: Answer = answer
            .parse()
            .map_err(|_| SubmitOutcome::Rejected(SubmitError::InvalidAnswer(answer.to_string())))?;
        let current = s.order.get(s.cursor).copied();
        let idx = self.index.get(item_id).copied();
        if idx.is_some_and(|i| s.answered.contains(&i)) {
            return Err(SubmitOutcome::Rejected(SubmitError::AlreadyAnswered(
                item_id.to_string(),
            )));
        }
        if idx.is_none() || idx != current {
            return Err(SubmitOutcome::Rejected(SubmitError::OutOfOrder {
                expected: current.map(|i| self.set.items[i].item_id.clone()),
                got: item_id.to_string(),
            }));
        }
        let idx = idx.expect("checked above");
        let response = RatingResponse {
            rater_id: s.rater_id.clone(),
            item_id: item_id.to_string(),
            answer,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
        };
        let line = serde_json::to_string(&response).expect("serializable");
        append_line(&mut self.log, &line).map_err(SubmitOutcome::Io)?;
        self.log_lines.push(line);
        let s = self.sessions.get_mut(session_id).expect("present");
        s.answered.insert(idx);
        s.advance();
        let s = &self.sessions[session_id];
        Ok(self.progress(s))
    }

    /// The log as currently acked, as one JSONL string.
    pub fn log_snapshot(&self) -> String {
        let mut out = String::new();
        for l in &self.log_lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn responses(&self) -> Vec<RatingResponse> {
        self.log_lines
            .iter()
            .map(|l| serde_json::from_str(l).expect("log lines are validated on write and replay"))
            .collect()
    }
}

#[derive(Debug)]
pub enum SubmitOutcome {
    Rejected(SubmitError),
    Io(std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_are_permutations_and_rater_specific() {
        let a = item_order(5, "R1", 107);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..107).collect::<Vec<_>>());
        assert_eq!(a, item_order(5, "R1", 107));
        assert_ne!(a, item_order(5, "R2", 107));
        assert_ne!(a, item_order(6, "R1", 107));
        assert_eq!(session_id(5, "R1").len(), 16);
    }

    #[test]
    fn rater_id_validation() {
        assert!(valid_rater_id("R10"));
        assert!(valid_rater_id("a.b-c_d"));
        assert!(!valid_rater_id(""));
        assert!(!valid_rater_id("../x"));
        assert!(!valid_rater_id(&"x".repeat(65)));
    }
}
