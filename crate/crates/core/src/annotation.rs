//! Rating store for the claim-quality and negation-entailment protocols.
//!
//! Ratings are appended to a JSON-lines log (fsync per write). The in-memory
//! index is rebuilt from that log on open, and the latest revision of each
//! (annotator, task) pair wins for aggregation.
//!
//! Negation tasks show their candidates under blinded slot labels `A`, `B`,
//! `C`, ... The slot order for a given annotator is a Fisher-Yates shuffle
//! driven by ChaCha8 seeded with [`permutation_seed`], i.e. the first eight
//! bytes (little endian) of SHA-256 over `claim_id`, `annotator`, `protocol`
//! and the decimal service seed joined by `0x1f`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::eval::{QualityRatings, RatingMatrix};
use crate::hashing::seed_from_parts;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("gating violation: {0}")]
pub struct GatingViolation(pub String);

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("duplicate task id {0:?}")]
    DuplicateTask(String),
    #[error("task {task} belongs to the {expected} protocol, not {got}")]
    ProtocolMismatch {
        task: String,
        expected: Protocol,
        got: Protocol,
    },
    #[error("slot labels {got:?} do not match the task's slots {expected:?}")]
    SlotMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("stale revision: submitted {submitted}, next is {next}")]
    StaleRevision { submitted: u64, next: u64 },
    #[error(transparent)]
    Gating(#[from] GatingViolation),
    #[error("{path}:{line}: {message}")]
    CorruptLog {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Quality,
    Negation,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Quality => "quality",
            Protocol::Negation => "negation",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quality" => Ok(Protocol::Quality),
            "negation" => Ok(Protocol::Negation),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

/// Entailment of a negation (hypothesis) given the original claim (premise).
/// Serialized as `3`, `2`, `1` or `"SKIP"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entailment {
    /// 3: definitely false given the premise.
    DefinitelyFalse,
    /// 2: might be true given the premise.
    MightBeTrue,
    /// 1: definitely true given the premise.
    DefinitelyTrue,
    /// Too ungrammatical to judge.
    Skip,
}

impl Serialize for Entailment {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Entailment::DefinitelyFalse => s.serialize_u8(3),
            Entailment::MightBeTrue => s.serialize_u8(2),
            Entailment::DefinitelyTrue => s.serialize_u8(1),
            Entailment::Skip => s.serialize_str("SKIP"),
        }
    }
}

impl<'de> Deserialize<'de> for Entailment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(3) => Ok(Entailment::DefinitelyFalse),
            Raw::Num(2) => Ok(Entailment::MightBeTrue),
            Raw::Num(1) => Ok(Entailment::DefinitelyTrue),
            Raw::Str(s) if s == "SKIP" => Ok(Entailment::Skip),
            Raw::Num(n) => Err(serde::de::Error::custom(format!("invalid entailment {n}"))),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid entailment {s:?}"))),
        }
    }
}

/// One annotator's judgment of one task.
///
/// Negation tasks show every method's candidate on one screen, so
/// `entailment` maps each blinded slot label to its rating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotator: String,
    pub task_id: String,
    pub protocol: Protocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluency: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decontextualized: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atomicity: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faithfulness: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entailment: Option<BTreeMap<String, Entailment>>,
    /// Unix seconds; filled in by the store when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    /// Expected revision on submit (optional); assigned revision once stored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revision: Option<u64>,
}

fn in_range(name: &str, v: Option<u8>, lo: u8, hi: u8) -> Result<(), GatingViolation> {
    match v {
        Some(x) if !(lo..=hi).contains(&x) => Err(GatingViolation(format!(
            "{name} must be in {lo}..={hi}, got {x}"
        ))),
        _ => Ok(()),
    }
}

fn presence(name: &str, v: Option<u8>, required: bool, why: &str) -> Result<(), GatingViolation> {
    match (v.is_some(), required) {
        (false, true) => Err(GatingViolation(format!("{name} is required when {why}"))),
        (true, false) => Err(GatingViolation(format!("{name} must be absent unless {why}"))),
        _ => Ok(()),
    }
}

impl AnnotationRecord {
    /// Check the conditional rating flow of the record's protocol.
    pub fn validate_gating(&self) -> Result<(), GatingViolation> {
        match self.protocol {
            Protocol::Quality => {
                let fluency = self
                    .fluency
                    .ok_or_else(|| GatingViolation("fluency is required".into()))?;
                in_range("fluency", Some(fluency), 1, 3)?;
                in_range("decontextualized", self.decontextualized, 0, 1)?;
                in_range("atomicity", self.atomicity, 0, 1)?;
                in_range("faithfulness", self.faithfulness, 1, 5)?;
                let legible = fluency > 1;
                presence("decontextualized", self.decontextualized, legible, "fluency > 1")?;
                let full = legible && self.decontextualized == Some(1);
                let why = "fluency > 1 and decontextualized = 1";
                presence("atomicity", self.atomicity, full, why)?;
                presence("faithfulness", self.faithfulness, full, why)?;
                if self.entailment.is_some() {
                    return Err(GatingViolation("entailment belongs to the negation protocol".into()));
                }
            }
            Protocol::Negation => {
                let quality_fields = [
                    ("fluency", self.fluency),
                    ("decontextualized", self.decontextualized),
                    ("atomicity", self.atomicity),
                    ("faithfulness", self.faithfulness),
                ];
                if let Some((name, _)) = quality_fields.iter().find(|(_, v)| v.is_some()) {
                    return Err(GatingViolation(format!("{name} belongs to the quality protocol")));
                }
                match &self.entailment {
                    Some(m) if !m.is_empty() => {}
                    _ => return Err(GatingViolation("entailment is required".into())),
                }
            }
        }
        Ok(())
    }

    pub fn quality_ratings(&self) -> QualityRatings {
        QualityRatings {
            fluency: self.fluency.unwrap_or(0),
            decontextualized: self.decontextualized,
            atomicity: self.atomicity,
            faithfulness: self.faithfulness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodCandidate {
    pub method: String,
    pub text: String,
}

/// A task as loaded from the task file; carries the method labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "lowercase")]
pub enum TaskSpec {
    Quality {
        task_id: String,
        claim: String,
        citance: String,
        #[serde(default)]
        context_before: String,
        #[serde(default)]
        context_after: String,
        method: String,
    },
    Negation {
        task_id: String,
        claim_id: String,
        original_claim: String,
        negations: Vec<MethodCandidate>,
    },
}

impl TaskSpec {
    pub fn task_id(&self) -> &str {
        match self {
            TaskSpec::Quality { task_id, .. } | TaskSpec::Negation { task_id, .. } => task_id,
        }
    }

    pub fn protocol(&self) -> Protocol {
        match self {
            TaskSpec::Quality { .. } => Protocol::Quality,
            TaskSpec::Negation { .. } => Protocol::Negation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityContext {
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindedNegation {
    pub slot: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskPayload {
    Quality {
        claim: String,
        citance: String,
        context: QualityContext,
    },
    Negation {
        original_claim: String,
        negations: Vec<BlindedNegation>,
    },
}

/// A task as served to an annotator. The slot → method map never leaves
/// the service before export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub protocol: Protocol,
    /// 1-based position in the protocol's queue.
    pub index: usize,
    pub payload: TaskPayload,
    #[serde(skip)]
    pub method_blinding: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextTask {
    Task(AnnotationTask),
    Done,
}

/// Slot label for position `i`: `A`..`Z`, then `S26`, `S27`, ...
pub fn slot_label(i: usize) -> String {
    if i < 26 {
        char::from(b'A' + i as u8).to_string()
    } else {
        format!("S{i}")
    }
}

pub fn permutation_seed(claim_id: &str, annotator: &str, protocol: Protocol, seed: u64) -> u64 {
    seed_from_parts(&[claim_id, annotator, protocol.as_str(), &seed.to_string()])
}

/// `order[slot] = index into the task's method list`.
pub fn slot_permutation(claim_id: &str, annotator: &str, protocol: Protocol, seed: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(permutation_seed(claim_id, annotator, protocol, seed));
    order.shuffle(&mut rng);
    order
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolProgress {
    pub total: usize,
    pub completed: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub annotator: String,
    pub quality: ProtocolProgress,
    pub negation: ProtocolProgress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRating {
    pub slot: String,
    pub method: String,
    pub text: String,
    pub entailment: Entailment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRow {
    pub annotator: String,
    pub task_id: String,
    pub revision: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratings: Option<QualityRatings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negations: Option<Vec<SlotRating>>,
}

/// Latest-revision ratings for one protocol with methods unblinded. Rows are
/// ordered by task queue position, then annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Export {
    pub protocol: Protocol,
    pub annotators: Vec<String>,
    pub task_ids: Vec<String>,
    pub rows: Vec<ExportRow>,
}

impl Export {
    /// Rater × task matrix for one quality criterion
    /// (`fluency`, `decontextualized`, `atomicity`, `faithfulness`).
    pub fn quality_matrix(&self, criterion: &str) -> Option<RatingMatrix> {
        let pick = |r: &QualityRatings| -> Option<Option<u8>> {
            Some(match criterion {
                "fluency" => Some(r.fluency),
                "decontextualized" => r.decontextualized,
                "atomicity" => r.atomicity,
                "faithfulness" => r.faithfulness,
                _ => return None,
            })
        };
        pick(&QualityRatings::default())?;
        let mut m = self.empty_matrix(self.task_ids.len());
        let (ai, ti) = self.indices();
        for row in &self.rows {
            if let Some(r) = &row.ratings {
                m[ai[row.annotator.as_str()]][ti[row.task_id.as_str()]] =
                    pick(r).flatten().map(f64::from);
            }
        }
        Some(m)
    }

    /// Rater × (task, method) matrix of entailment labels; SKIP is the
    /// category 0.
    pub fn entailment_matrix(&self) -> (Vec<(String, String)>, RatingMatrix) {
        let items: BTreeSet<(usize, String)> = {
            let (_, ti) = self.indices();
            self.rows
                .iter()
                .flat_map(|r| {
                    let t = ti[r.task_id.as_str()];
                    r.negations.iter().flatten().map(move |s| (t, s.method.clone()))
                })
                .collect()
        };
        let items: Vec<(usize, String)> = items.into_iter().collect();
        let pos: HashMap<(usize, &str), usize> =
            items.iter().enumerate().map(|(i, (t, m))| ((*t, m.as_str()), i)).collect();
        let mut m = self.empty_matrix(items.len());
        let (ai, ti) = self.indices();
        for row in &self.rows {
            let t = ti[row.task_id.as_str()];
            for s in row.negations.iter().flatten() {
                let v = match s.entailment {
                    Entailment::DefinitelyFalse => 3.0,
                    Entailment::MightBeTrue => 2.0,
                    Entailment::DefinitelyTrue => 1.0,
                    Entailment::Skip => 0.0,
                };
                m[ai[row.annotator.as_str()]][pos[&(t, s.method.as_str())]] = Some(v);
            }
        }
        let labels = items
            .into_iter()
            .map(|(t, method)| (self.task_ids[t].clone(), method))
            .collect();
        (labels, m)
    }

    /// One (method, accepted) judgment per quality task, accepted when a
    /// strict majority of its annotators accepted the claim.
    pub fn majority_judgments(&self) -> Vec<(String, bool)> {
        let mut per_task: BTreeMap<&str, (&str, usize, usize)> = BTreeMap::new();
        for row in &self.rows {
            if let (Some(method), Some(ok)) = (&row.method, row.accepted) {
                let e = per_task.entry(&row.task_id).or_insert((method, 0, 0));
                e.1 += 1;
                e.2 += usize::from(ok);
            }
        }
        per_task
            .into_values()
            .map(|(m, n, ok)| (m.to_string(), 2 * ok > n))
            .collect()
    }

    /// Every (method, entailment) rating in the export.
    pub fn entailment_ratings(&self) -> Vec<(String, Entailment)> {
        self.rows
            .iter()
            .flat_map(|r| r.negations.iter().flatten())
            .map(|s| (s.method.clone(), s.entailment))
            .collect()
    }

    fn empty_matrix(&self, cols: usize) -> RatingMatrix {
        vec![vec![None; cols]; self.annotators.len()]
    }

    fn indices(&self) -> (HashMap<&str, usize>, HashMap<&str, usize>) {
        let a = self.annotators.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let t = self.task_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        (a, t)
    }
}

/// Latest-revision view: (annotator, task_id) → full revision history.
pub type RatingIndex = BTreeMap<(String, String), Vec<AnnotationRecord>>;

#[derive(Debug, Clone, Default)]
pub struct StoreConfig {
    pub seed: u64,
    /// Registered annotator ids. Empty means any id is accepted.
    pub annotators: BTreeSet<String>,
}

pub struct AnnotationStore {
    tasks: Vec<TaskSpec>,
    by_id: HashMap<String, usize>,
    queues: BTreeMap<Protocol, Vec<usize>>,
    config: StoreConfig,
    log_path: PathBuf,
    log: Mutex<File>,
    index: RwLock<RatingIndex>,
}

pub const LOG_FILE: &str = "ratings.jsonl";

impl AnnotationStore {
    /// Open (or create) the store under `data_dir`, replaying its log.
    pub fn open(data_dir: &Path, tasks: Vec<TaskSpec>, config: StoreConfig) -> Result<Self, AnnotationError> {
        let mut by_id = HashMap::new();
        let mut queues: BTreeMap<Protocol, Vec<usize>> = BTreeMap::new();
        for (i, t) in tasks.iter().enumerate() {
            if by_id.insert(t.task_id().to_string(), i).is_some() {
                return Err(AnnotationError::DuplicateTask(t.task_id().to_string()));
            }
            queues.entry(t.protocol()).or_default().push(i);
        }
        std::fs::create_dir_all(data_dir)?;
        let log_path = data_dir.join(LOG_FILE);
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        let store = Self {
            tasks,
            by_id,
            queues,
            config,
            log_path,
            log: Mutex::new(log),
            index: RwLock::new(BTreeMap::new()),
        };
        let replayed = store.replay()?;
        *store.index.write().expect("index lock poisoned") = replayed;
        Ok(store)
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    /// Rebuild the rating index from the log on disk.
    pub fn replay(&self) -> Result<RatingIndex, AnnotationError> {
        let mut index = RatingIndex::new();
        let reader = BufReader::new(File::open(&self.log_path)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |message: String| AnnotationError::CorruptLog {
                path: self.log_path.clone(),
                line: i + 1,
                message,
            };
            let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            rec.validate_gating().map_err(|e| corrupt(e.to_string()))?;
            let history = index.entry((rec.annotator.clone(), rec.task_id.clone())).or_default();
            let expected = history.len() as u64 + 1;
            if rec.revision != Some(expected) {
                return Err(corrupt(format!("expected revision {expected}, found {:?}", rec.revision)));
            }
            history.push(rec);
        }
        Ok(index)
    }

    /// Snapshot of the in-memory index.
    pub fn snapshot(&self) -> RatingIndex {
        self.index.read().expect("index lock poisoned").clone()
    }

    fn check_annotator(&self, annotator: &str) -> Result<(), AnnotationError> {
        if !self.config.annotators.is_empty() && !self.config.annotators.contains(annotator) {
            return Err(AnnotationError::UnknownAnnotator(annotator.to_string()));
        }
        Ok(())
    }

    fn completed(&self, annotator: &str, task_id: &str) -> bool {
        self.index
            .read()
            .expect("index lock poisoned")
            .contains_key(&(annotator.to_string(), task_id.to_string()))
    }

    /// Render a task for an annotator, applying the slot permutation.
    pub fn render(&self, task_idx: usize, annotator: &str) -> AnnotationTask {
        let spec = &self.tasks[task_idx];
        let index = self.queues[&spec.protocol()]
            .iter()
            .position(|&i| i == task_idx)
            .expect("task is queued")
            + 1;
        match spec {
            TaskSpec::Quality {
                task_id,
                claim,
                citance,
                context_before,
                context_after,
                ..
            } => AnnotationTask {
                task_id: task_id.clone(),
                protocol: Protocol::Quality,
                index,
                payload: TaskPayload::Quality {
                    claim: claim.clone(),
                    citance: citance.clone(),
                    context: QualityContext {
                        before: context_before.clone(),
                        after: context_after.clone(),
                    },
                },
                method_blinding: BTreeMap::new(),
            },
            TaskSpec::Negation {
                task_id,
                claim_id,
                original_claim,
                negations,
            } => {
                let order = slot_permutation(claim_id, annotator, Protocol::Negation, self.config.seed, negations.len());
                let mut blinding = BTreeMap::new();
                let shown = order
                    .iter()
                    .enumerate()
                    .map(|(slot, &m)| {
                        let label = slot_label(slot);
                        blinding.insert(label.clone(), negations[m].method.clone());
                        BlindedNegation {
                            slot: label,
                            text: negations[m].text.clone(),
                        }
                    })
                    .collect();
                AnnotationTask {
                    task_id: task_id.clone(),
                    protocol: Protocol::Negation,
                    index,
                    payload: TaskPayload::Negation {
                        original_claim: original_claim.clone(),
                        negations: shown,
                    },
                    method_blinding: blinding,
                }
            }
        }
    }

    /// Lowest-indexed task of `protocol` the annotator has not rated yet.
    pub fn next_task(&self, annotator: &str, protocol: Protocol) -> Result<NextTask, AnnotationError> {
        self.check_annotator(annotator)?;
        let queue = self.queues.get(&protocol).map(Vec::as_slice).unwrap_or(&[]);
        Ok(queue
            .iter()
            .find(|&&i| !self.completed(annotator, self.tasks[i].task_id()))
            .map(|&i| NextTask::Task(self.render(i, annotator)))
            .unwrap_or(NextTask::Done))
    }

    /// Validate and append a rating; returns the stored revision.
    pub fn submit(&self, mut rec: AnnotationRecord) -> Result<u64, AnnotationError> {
        self.check_annotator(&rec.annotator)?;
        let &task_idx = self
            .by_id
            .get(&rec.task_id)
            .ok_or_else(|| AnnotationError::UnknownTask(rec.task_id.clone()))?;
        let spec = &self.tasks[task_idx];
        if spec.protocol() != rec.protocol {
            return Err(AnnotationError::ProtocolMismatch {
                task: rec.task_id.clone(),
                expected: spec.protocol(),
                got: rec.protocol,
            });
        }
        rec.validate_gating()?;
        if let (TaskSpec::Negation { negations, .. }, Some(ent)) = (spec, &rec.entailment) {
            let expected: Vec<String> = (0..negations.len()).map(slot_label).collect();
            let got: Vec<String> = ent.keys().cloned().collect();
            let mut sorted_expected = expected.clone();
            sorted_expected.sort();
            if got != sorted_expected {
                return Err(AnnotationError::SlotMismatch { expected, got });
            }
        }

        // Writes are serialized by the log lock; the index lock is only held
        // for the in-memory update.
        let mut log = self.log.lock().expect("log lock poisoned");
        let key = (rec.annotator.clone(), rec.task_id.clone());
        let next = self
            .index
            .read()
            .expect("index lock poisoned")
            .get(&key)
            .map_or(0, Vec::len) as u64
            + 1;
        if let Some(submitted) = rec.revision {
            if submitted != next {
                return Err(AnnotationError::StaleRevision { submitted, next });
            }
        }
        rec.revision = Some(next);
        if rec.timestamp.is_none() {
            rec.timestamp = Some(SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()));
        }
        let mut line = serde_json::to_string(&rec).map_err(io::Error::other)?;
        line.push('\n');
        log.write_all(line.as_bytes())?;
        log.sync_data()?;
        self.index
            .write()
            .expect("index lock poisoned")
            .entry(key)
            .or_default()
            .push(rec);
        Ok(next)
    }

    pub fn progress(&self, annotator: &str) -> Result<Progress, AnnotationError> {
        self.check_annotator(annotator)?;
        let count = |p: Protocol| {
            let queue = self.queues.get(&p).map(Vec::as_slice).unwrap_or(&[]);
            let completed = queue
                .iter()
                .filter(|&&i| self.completed(annotator, self.tasks[i].task_id()))
                .count();
            ProtocolProgress {
                total: queue.len(),
                completed,
                remaining: queue.len() - completed,
            }
        };
        Ok(Progress {
            annotator: annotator.to_string(),
            quality: count(Protocol::Quality),
            negation: count(Protocol::Negation),
        })
    }

    /// Latest revisions for `protocol`, unblinded. Gating is re-verified.
    pub fn export(&self, protocol: Protocol) -> Result<Export, AnnotationError> {
        let index = self.snapshot();
        let queue = self.queues.get(&protocol).cloned().unwrap_or_default();
        let mut annotators = BTreeSet::new();
        let mut rows = Vec::new();
        for &ti in &queue {
            let spec = &self.tasks[ti];
            for ((annotator, task_id), history) in &index {
                if task_id != spec.task_id() {
                    continue;
                }
                let rec = history.last().expect("history is never empty");
                rec.validate_gating()?;
                annotators.insert(annotator.clone());
                let mut row = ExportRow {
                    annotator: annotator.clone(),
                    task_id: task_id.clone(),
                    revision: rec.revision.unwrap_or(0),
                    method: None,
                    ratings: None,
                    accepted: None,
                    negations: None,
                };
                match spec {
                    TaskSpec::Quality { method, .. } => {
                        let q = rec.quality_ratings();
                        row.method = Some(method.clone());
                        row.accepted = Some(q.accepted());
                        row.ratings = Some(q);
                    }
                    TaskSpec::Negation { .. } => {
                        let task = self.render(ti, annotator);
                        let TaskPayload::Negation { negations, .. } = &task.payload else {
                            unreachable!("negation spec renders a negation payload")
                        };
                        let ent = rec.entailment.as_ref().expect("validated");
                        row.negations = Some(
                            negations
                                .iter()
                                .filter_map(|b| {
                                    Some(SlotRating {
                                        slot: b.slot.clone(),
                                        method: task.method_blinding[&b.slot].clone(),
                                        text: b.text.clone(),
                                        entailment: *ent.get(&b.slot)?,
                                    })
                                })
                                .collect(),
                        );
                    }
                }
                rows.push(row);
            }
        }
        Ok(Export {
            protocol,
            annotators: annotators.into_iter().collect(),
            task_ids: queue.iter().map(|&i| self.tasks[i].task_id().to_string()).collect(),
            rows,
        })
    }
}
