//! Blinded real-versus-generated reader study.
//!
//! A session is a balanced, seed-shuffled deck of trials. Clients only ever
//! see [`TrialPayload`]s: a trial index and freshly re-encoded PNG bytes, with
//! no id, path or label. Every state change is appended to a JSON-lines event
//! log so an interrupted study can be resumed.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use base64::Engine as _;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::dataio::{encode_png_rgb, load_image, Cohort, DatasetManifest};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Truth {
    Real,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionState {
    Open,
    Complete,
}

/// A candidate image for the deck.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolItem {
    pub image_id: String,
    pub path: PathBuf,
}

impl PoolItem {
    pub fn from_manifest(manifest: &DatasetManifest) -> Vec<PoolItem> {
        manifest
            .entries
            .iter()
            .map(|e| PoolItem { image_id: e.id(), path: manifest.resolve(&e.image) })
            .collect()
    }
}

/// Server-side trial record. Never sent to a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_index: usize,
    pub image_id: String,
    pub image_path: PathBuf,
    pub truth: Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub answer: Truth,
    pub timestamp_ms: u64,
}

/// What a reader is shown for one trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPayload {
    pub trial_index: usize,
    pub n_trials: usize,
    pub answered: usize,
    pub image_png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextTrial {
    Trial(TrialPayload),
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub real_correct_rate: f64,
    pub generated_correct_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub accuracy: f64,
    pub correct: usize,
    pub n_trials: usize,
    pub per_class: PerClass,
    /// Rows: truth REAL, GENERATED. Columns: answer REAL, GENERATED.
    pub confusion: [[usize; 2]; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Create {
        session_id: String,
        seed: u64,
        n_per_class: usize,
        trials: Vec<Trial>,
        timestamp_ms: u64,
    },
    Response {
        trial_index: usize,
        answer: Truth,
        timestamp_ms: u64,
    },
    Complete {
        timestamp_ms: u64,
    },
}

#[derive(Debug, Clone)]
pub struct StudySession {
    pub session_id: String,
    pub seed: u64,
    pub n_per_class: usize,
    pub trials: Vec<Trial>,
    pub responses: BTreeMap<usize, Response>,
    pub state: SessionState,
    log_path: Option<PathBuf>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn draw(pool: &[PoolItem], n: usize, name: &'static str, seed: u64, stream: u64) -> Result<Vec<PoolItem>> {
    if pool.len() < n {
        return Err(Error::PoolTooSmall { pool: name, needed: n, available: pool.len() });
    }
    let mut sorted = pool.to_vec();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut r = rng::rng(seed, &[0x5747, stream]);
    let mut picked: Vec<usize> = index::sample(&mut r, sorted.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| sorted[i].clone()).collect())
}

/// Draws `n_per_class` images from each pool without replacement and
/// shuffles them into one deck. Pool order does not matter.
pub fn create_session(
    real_pool: &[PoolItem],
    gen_pool: &[PoolItem],
    n_per_class: usize,
    seed: u64,
) -> Result<StudySession> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be at least 1".into()));
    }
    let real = draw(real_pool, n_per_class, "real", seed, 0)?;
    let generated = draw(gen_pool, n_per_class, "generated", seed, 1)?;
    let mut deck: Vec<(PoolItem, Truth)> = real
        .into_iter()
        .map(|p| (p, Truth::Real))
        .chain(generated.into_iter().map(|p| (p, Truth::Generated)))
        .collect();
    deck.shuffle(&mut rng::rng(seed, &[0x5747, 2]));
    let trials = deck
        .into_iter()
        .enumerate()
        .map(|(i, (p, truth))| Trial { trial_index: i, image_id: p.image_id, image_path: p.path, truth })
        .collect();
    Ok(StudySession {
        session_id: uuid::Uuid::new_v4().simple().to_string(),
        seed,
        n_per_class,
        trials,
        responses: BTreeMap::new(),
        state: SessionState::Open,
        log_path: None,
    })
}

impl StudySession {
    pub fn n_trials(&self) -> usize {
        self.trials.len()
    }

    pub fn answered(&self) -> usize {
        self.responses.len()
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log_path.as_deref()
    }

    /// Starts an event log at `path` containing the creation event and any
    /// responses already recorded.
    pub fn persist_to(&mut self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        File::create(path).map_err(|e| Error::io(path, e))?;
        self.log_path = Some(path.to_path_buf());
        self.append(&Event::Create {
            session_id: self.session_id.clone(),
            seed: self.seed,
            n_per_class: self.n_per_class,
            trials: self.trials.clone(),
            timestamp_ms: now_ms(),
        })?;
        let responses: Vec<_> = self.responses.iter().map(|(&i, &r)| (i, r)).collect();
        for (trial_index, r) in responses {
            self.append(&Event::Response { trial_index, answer: r.answer, timestamp_ms: r.timestamp_ms })?;
        }
        if self.state == SessionState::Complete {
            self.append(&Event::Complete { timestamp_ms: now_ms() })?;
        }
        Ok(())
    }

    fn append(&self, event: &Event) -> Result<()> {
        let Some(path) = &self.log_path else { return Ok(()) };
        let mut f = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
        let line = serde_json::to_string(event).expect("event serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        f.sync_data().map_err(|e| Error::io(path, e))
    }

    /// Rebuilds a session from its event log. Further events are appended to the same file.
    pub fn replay(path: &Path) -> Result<StudySession> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let bad = |what: String| Error::InvalidArgument(format!("{}: {what}", path.display()));
        let mut session: Option<StudySession> = None;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let event: Event = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            match (event, session.as_mut()) {
                (Event::Create { session_id, seed, n_per_class, trials, .. }, None) => {
                    session = Some(StudySession {
                        session_id,
                        seed,
                        n_per_class,
                        trials,
                        responses: BTreeMap::new(),
                        state: SessionState::Open,
                        log_path: Some(path.to_path_buf()),
                    });
                }
                (Event::Response { trial_index, answer, timestamp_ms }, Some(s)) => {
                    s.responses.insert(trial_index, Response { answer, timestamp_ms });
                }
                (Event::Complete { .. }, Some(s)) => s.state = SessionState::Complete,
                (_, _) => return Err(bad("events out of order".into())),
            }
        }
        session.ok_or_else(|| bad("empty event log".into()))
    }

    /// The lowest-index unanswered trial, blinded. Once every trial is
    /// answered this returns `Done` and closes the session.
    pub fn next_trial(&mut self) -> Result<NextTrial> {
        if self.state == SessionState::Complete {
            return Err(Error::SessionComplete);
        }
        let Some(trial) = self.trials.iter().find(|t| !self.responses.contains_key(&t.trial_index)) else {
            self.state = SessionState::Complete;
            self.append(&Event::Complete { timestamp_ms: now_ms() })?;
            return Ok(NextTrial::Done);
        };
        let image = load_image(&trial.image_path, Cohort::Cohort2)?;
        let png = encode_png_rgb(&image.pixels);
        Ok(NextTrial::Trial(TrialPayload {
            trial_index: trial.trial_index,
            n_trials: self.n_trials(),
            answered: self.answered(),
            image_png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        }))
    }

    /// Records an answer; returns how many trials are now answered.
    pub fn submit_response(&mut self, trial_index: usize, answer: Truth) -> Result<usize> {
        if self.state == SessionState::Complete {
            return Err(Error::SessionComplete);
        }
        if trial_index >= self.trials.len() {
            return Err(Error::UnknownTrial(trial_index));
        }
        if self.responses.contains_key(&trial_index) {
            return Err(Error::DuplicateResponse(trial_index));
        }
        let r = Response { answer, timestamp_ms: now_ms() };
        self.append(&Event::Response { trial_index, answer, timestamp_ms: r.timestamp_ms })?;
        self.responses.insert(trial_index, r);
        Ok(self.responses.len())
    }
}

pub fn score_session(session: &StudySession) -> Result<StudyReport> {
    if session.state != SessionState::Complete {
        return Err(Error::SessionIncomplete { answered: session.answered(), total: session.n_trials() });
    }
    let slot = |t: Truth| usize::from(t == Truth::Generated);
    let mut confusion = [[0usize; 2]; 2];
    for t in &session.trials {
        let r = session
            .responses
            .get(&t.trial_index)
            .ok_or(Error::SessionIncomplete { answered: session.answered(), total: session.n_trials() })?;
        confusion[slot(t.truth)][slot(r.answer)] += 1;
    }
    let n = session.n_trials();
    let correct = confusion[0][0] + confusion[1][1];
    let rate = |row: [usize; 2], hit: usize| {
        let total = row[0] + row[1];
        if total == 0 {
            0.0
        } else {
            row[hit] as f64 / total as f64
        }
    };
    Ok(StudyReport {
        accuracy: correct as f64 / n as f64,
        correct,
        n_trials: n,
        per_class: PerClass {
            real_correct_rate: rate(confusion[0], 0),
            generated_correct_rate: rate(confusion[1], 1),
        },
        confusion,
    })
}

/// Sessions by id. Each session has its own lock, so one reader's
/// submissions are serialized while different sessions proceed in parallel.
#[derive(Default)]
pub struct StudyStore {
    dir: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Arc<Mutex<StudySession>>>>,
}

impl StudyStore {
    pub fn in_memory() -> Self {
        StudyStore::default()
    }

    /// Persists sessions under `dir` and resumes any logs already there.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|x| x == "jsonl") {
                let s = StudySession::replay(&path)?;
                sessions.insert(s.session_id.clone(), Arc::new(Mutex::new(s)));
            }
        }
        Ok(StudyStore { dir: Some(dir.to_path_buf()), sessions: Mutex::new(sessions) })
    }

    pub fn insert(&self, mut session: StudySession) -> Result<String> {
        if let Some(dir) = &self.dir {
            session.persist_to(&dir.join(format!("{}.jsonl", session.session_id)))?;
        }
        let id = session.session_id.clone();
        self.sessions
            .lock()
            .expect("session map poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    /// Runs `f` with exclusive access to one session.
    pub fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut StudySession) -> Result<T>) -> Result<T> {
        let handle = self
            .sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(id.to_string()))?;
        let mut session = handle.lock().expect("session poisoned");
        f(&mut session)
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
