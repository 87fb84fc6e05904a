//! Blind clinical evaluation: sessions, anonymised assignments, submissions
//! and aggregate results.
//!
//! State is an append-only JSON-lines log replayed on open. Writes go through
//! one writer lock; readers take an `Arc` snapshot and never block writers for
//! longer than a pointer swap.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{num, pct, Brevity, RubricMaps, TextTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetTag {
    Mimic,
    Chexpert,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub model_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationCase {
    pub case_id: String,
    pub image_uri: String,
    /// Absent when the case is judged without a reference report.
    #[serde(default)]
    pub reference_report: Option<String>,
    pub candidates: Vec<Candidate>,
    pub dataset_tag: DatasetTag,
}

impl EvaluationCase {
    pub fn validate(&self) -> Result<()> {
        if self.case_id.trim().is_empty() {
            return Err(Error::validation("case_id is empty"));
        }
        if self.candidates.len() < 2 {
            return Err(Error::validation(format!(
                "case {:?} has {} candidate(s); blinding needs at least 2",
                self.case_id,
                self.candidates.len()
            )));
        }
        let ids: BTreeSet<&str> = self.candidates.iter().map(|c| c.model_id.as_str()).collect();
        if ids.len() != self.candidates.len() {
            return Err(Error::validation(format!("case {:?} repeats a model_id", self.case_id)));
        }
        Ok(())
    }

    pub fn candidate(&self, model_id: &str) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.model_id == model_id)
    }
}

/// Display slot `i` shows the report of `slots[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub case_id: String,
    pub slots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub rater_id: String,
    pub seed: u64,
    pub assignments: Vec<Assignment>,
    pub created_at: DateTime<Utc>,
    pub open: bool,
}

/// One independently shuffled slot order per case, drawn in case order.
pub fn draw_assignments(cases: &[&EvaluationCase], seed: u64) -> Vec<Assignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases
        .iter()
        .map(|c| {
            let mut slots: Vec<String> = c.candidates.iter().map(|x| x.model_id.clone()).collect();
            slots.shuffle(&mut rng);
            Assignment {
                case_id: c.case_id.clone(),
                slots,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotScores {
    /// 1 is best; ranks across a case form a permutation of 1..=n.
    pub rank: u32,
    /// Reference-comparison letter; only for cases with a reference.
    #[serde(default)]
    pub rubric: Option<String>,
    pub brevity: Brevity,
    pub accuracy: u8,
    #[serde(default)]
    pub dangerous: bool,
    #[serde(default)]
    pub temporal_hallucination: bool,
}

/// What a rater posts for one case, indexed by display slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub rater_id: String,
    pub abnormal: bool,
    pub slots: Vec<SlotScores>,
}

/// A stored submission with slots resolved back to model ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub session_id: String,
    pub case_id: String,
    pub rater_id: String,
    pub abnormal: bool,
    pub slots: Vec<SlotScores>,
    /// Model behind each slot, same order as `slots`.
    pub models: Vec<String>,
    pub submitted_at: DateTime<Utc>,
}

impl SubmissionRecord {
    pub fn by_model(&self) -> impl Iterator<Item = (&str, &SlotScores)> {
        self.models.iter().map(String::as_str).zip(&self.slots)
    }
}

pub fn validate_submission(sub: &Submission, case: &EvaluationCase, maps: &RubricMaps) -> Result<()> {
    let n = case.candidates.len();
    if sub.slots.len() != n {
        return Err(Error::validation(format!(
            "case {:?} has {n} slots, submission scores {}",
            case.case_id,
            sub.slots.len()
        )));
    }
    let mut ranks: Vec<u32> = sub.slots.iter().map(|s| s.rank).collect();
    ranks.sort_unstable();
    if ranks.iter().enumerate().any(|(i, &r)| r as usize != i + 1) {
        return Err(Error::validation(format!("ranks must be a permutation of 1..={n}")));
    }
    for (i, s) in sub.slots.iter().enumerate() {
        maps.accuracy_score(s.accuracy)
            .map_err(|e| Error::validation(format!("slot {}: {e}", i + 1)))?;
        maps.brevity_score(s.brevity)
            .map_err(|e| Error::validation(format!("slot {}: {e}", i + 1)))?;
        maps.rank_score(s.rank)
            .map_err(|e| Error::validation(format!("slot {}: {e}", i + 1)))?;
        match (&case.reference_report, &s.rubric) {
            (Some(_), None) => {
                return Err(Error::validation(format!("slot {}: rubric letter required", i + 1)));
            }
            (Some(_), Some(letter)) if !maps.is_rubric_letter(letter) => {
                return Err(Error::validation(format!(
                    "slot {}: unknown rubric letter {letter:?}",
                    i + 1
                )));
            }
            (None, Some(_)) => {
                return Err(Error::validation(format!(
                    "slot {}: case has no reference report, rubric does not apply",
                    i + 1
                )));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Which score controls apply to a case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreFields {
    pub rank_max: u32,
    /// Empty when the case has no reference report.
    pub rubric_letters: Vec<String>,
    pub brevity: Vec<Brevity>,
    pub accuracy_min: u8,
    pub accuracy_max: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotView {
    /// 1-based display number.
    pub slot: usize,
    pub label: String,
    pub text: String,
}

/// Everything a rater sees for one case. Carries no model identities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseView {
    pub session_id: String,
    pub index: usize,
    pub total: usize,
    pub case_id: String,
    pub image_uri: String,
    pub reference_report: Option<String>,
    pub slots: Vec<SlotView>,
    pub fields: ScoreFields,
    /// The rater's earlier answer for this case, if any.
    pub previous: Option<Submission>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionAck {
    pub session_id: String,
    pub case_id: String,
    pub index: usize,
    pub replaced: bool,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEntry {
    Case(EvaluationCase),
    Session(Session),
    Submission(SubmissionRecord),
    Close { session_id: String },
}

#[derive(Debug, Clone, Default)]
pub struct State {
    cases: BTreeMap<String, EvaluationCase>,
    sessions: BTreeMap<String, Session>,
    /// Keyed by (session, case, rater).
    submissions: BTreeMap<(String, String, String), SubmissionRecord>,
}

impl State {
    pub fn case(&self, case_id: &str) -> Option<&EvaluationCase> {
        self.cases.get(case_id)
    }

    pub fn cases(&self) -> impl Iterator<Item = &EvaluationCase> {
        self.cases.values()
    }

    pub fn session(&self, session_id: &str) -> Option<&Session> {
        self.sessions.get(session_id)
    }

    pub fn submissions(&self) -> impl Iterator<Item = &SubmissionRecord> {
        self.submissions.values()
    }

    fn apply(&mut self, entry: LogEntry) {
        match entry {
            LogEntry::Case(c) => {
                self.cases.insert(c.case_id.clone(), c);
            }
            LogEntry::Session(s) => {
                self.sessions.insert(s.session_id.clone(), s);
            }
            LogEntry::Submission(r) => {
                let key = (r.session_id.clone(), r.case_id.clone(), r.rater_id.clone());
                self.submissions.insert(key, r);
            }
            LogEntry::Close { session_id } => {
                if let Some(s) = self.sessions.get_mut(&session_id) {
                    s.open = false;
                }
            }
        }
    }
}

pub struct EvalStore {
    state: RwLock<Arc<State>>,
    writer: Mutex<Option<File>>,
    path: Option<PathBuf>,
    maps: RubricMaps,
}

impl EvalStore {
    /// A store that keeps nothing on disk.
    pub fn in_memory() -> Self {
        Self {
            state: RwLock::new(Arc::new(State::default())),
            writer: Mutex::new(None),
            path: None,
            maps: RubricMaps::default(),
        }
    }

    /// Opens or creates a log file and replays it. A final line cut short by
    /// a crash is dropped.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut state = State::default();
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path)?);
            let mut good_len = 0u64;
            let mut line = String::new();
            let mut lineno = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line)?;
                if read == 0 {
                    break;
                }
                lineno += 1;
                let complete = line.ends_with('\n');
                if line.trim().is_empty() {
                    good_len += read as u64;
                    continue;
                }
                // entries are written with their newline in one call, so a
                // missing newline marks a torn write
                if !complete {
                    break;
                }
                let entry: LogEntry = serde_json::from_str(line.trim_end())
                    .map_err(|e| Error::format(format!("{}:{lineno}: {e}", path.display())))?;
                state.apply(entry);
                good_len += read as u64;
            }
            let f = OpenOptions::new().write(true).open(&path)?;
            f.set_len(good_len)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            state: RwLock::new(Arc::new(state)),
            writer: Mutex::new(Some(file)),
            path: Some(path),
            maps: RubricMaps::default(),
        })
    }

    pub fn with_maps(mut self, maps: RubricMaps) -> Self {
        self.maps = maps;
        self
    }

    pub fn maps(&self) -> &RubricMaps {
        &self.maps
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// A consistent read-only view.
    pub fn snapshot(&self) -> Arc<State> {
        self.state.read().clone()
    }

    /// Validates against the latest state, appends to the log, then publishes.
    fn commit<T>(&self, f: impl FnOnce(&State) -> Result<(Vec<LogEntry>, T)>) -> Result<T> {
        let mut writer = self.writer.lock();
        let current = self.snapshot();
        let (entries, out) = f(&current)?;
        if entries.is_empty() {
            return Ok(out);
        }
        if let Some(file) = writer.as_mut() {
            let mut buf = Vec::new();
            for e in &entries {
                serde_json::to_writer(&mut buf, e)?;
                buf.push(b'\n');
            }
            file.write_all(&buf)?;
            file.sync_data()?;
        }
        let mut next = (*current).clone();
        for e in entries {
            next.apply(e);
        }
        *self.state.write() = Arc::new(next);
        Ok(out)
    }

    /// Adds cases. Re-importing an identical case is a no-op; changing an
    /// existing case is refused because sessions may already reference it.
    pub fn import_cases(&self, cases: Vec<EvaluationCase>) -> Result<usize> {
        self.commit(|state| {
            let mut seen = BTreeSet::new();
            let mut entries = Vec::new();
            for c in cases {
                c.validate()?;
                if !seen.insert(c.case_id.clone()) {
                    return Err(Error::validation(format!("case {:?} listed twice", c.case_id)));
                }
                match state.case(&c.case_id) {
                    Some(existing) if *existing == c => {}
                    Some(_) => {
                        return Err(Error::Conflict(format!(
                            "case {:?} already exists with different content",
                            c.case_id
                        )));
                    }
                    None => entries.push(LogEntry::Case(c)),
                }
            }
            let n = entries.len();
            Ok((entries, n))
        })
    }

    pub fn create_session(&self, case_ids: &[String], rater_id: &str, seed: u64) -> Result<Session> {
        if rater_id.trim().is_empty() {
            return Err(Error::validation("rater_id is empty"));
        }
        if case_ids.is_empty() {
            return Err(Error::validation("a session needs at least one case"));
        }
        self.commit(|state| {
            let cases = case_ids
                .iter()
                .map(|id| state.case(id).ok_or_else(|| Error::NotFound(format!("case {id:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let session = Session {
                session_id: uuid::Uuid::new_v4().to_string(),
                rater_id: rater_id.to_string(),
                seed,
                assignments: draw_assignments(&cases, seed),
                created_at: Utc::now(),
                open: true,
            };
            Ok((vec![LogEntry::Session(session.clone())], session))
        })
    }

    pub fn close_session(&self, session_id: &str) -> Result<()> {
        self.commit(|state| {
            let s = state
                .session(session_id)
                .ok_or_else(|| Error::NotFound(format!("session {session_id:?}")))?;
            let entries = if s.open {
                vec![LogEntry::Close {
                    session_id: session_id.to_string(),
                }]
            } else {
                vec![]
            };
            Ok((entries, ()))
        })
    }

    pub fn case_view(&self, session_id: &str, index: usize) -> Result<CaseView> {
        let state = self.snapshot();
        let (session, assignment, case) = locate(&state, session_id, index)?;
        let slots = assignment
            .slots
            .iter()
            .enumerate()
            .map(|(i, m)| SlotView {
                slot: i + 1,
                label: format!("Model {}", i + 1),
                text: case.candidate(m).map(|c| c.text.clone()).unwrap_or_default(),
            })
            .collect();
        let previous = state
            .submissions
            .get(&(session_id.to_string(), case.case_id.clone(), session.rater_id.clone()))
            .map(|r| Submission {
                rater_id: r.rater_id.clone(),
                abnormal: r.abnormal,
                slots: r.slots.clone(),
            });
        let rubric_letters = if case.reference_report.is_some() {
            self.maps.rubric.keys().cloned().collect()
        } else {
            vec![]
        };
        Ok(CaseView {
            session_id: session_id.to_string(),
            index,
            total: session.assignments.len(),
            case_id: case.case_id.clone(),
            image_uri: case.image_uri.clone(),
            reference_report: case.reference_report.clone(),
            slots,
            fields: ScoreFields {
                rank_max: case.candidates.len() as u32,
                rubric_letters,
                brevity: self.maps.brevity.keys().copied().collect(),
                accuracy_min: self.maps.accuracy_min,
                accuracy_max: self.maps.accuracy_max,
            },
            previous,
        })
    }

    /// Stores a rater's scores for one case, replacing any earlier answer.
    pub fn submit(&self, session_id: &str, index: usize, sub: Submission) -> Result<SubmissionAck> {
        self.commit(|state| {
            let (session, assignment, case) = locate(state, session_id, index)?;
            if !session.open {
                return Err(Error::Conflict(format!("session {session_id:?} is closed")));
            }
            if sub.rater_id != session.rater_id {
                return Err(Error::validation(format!(
                    "rater {:?} does not own session {session_id:?}",
                    sub.rater_id
                )));
            }
            validate_submission(&sub, case, &self.maps)?;
            let key = (session_id.to_string(), case.case_id.clone(), sub.rater_id.clone());
            let record = SubmissionRecord {
                session_id: session_id.to_string(),
                case_id: case.case_id.clone(),
                rater_id: sub.rater_id,
                abnormal: sub.abnormal,
                slots: sub.slots,
                models: assignment.slots.clone(),
                submitted_at: Utc::now(),
            };
            let ack = SubmissionAck {
                session_id: session_id.to_string(),
                case_id: case.case_id.clone(),
                index,
                replaced: state.submissions.contains_key(&key),
                submitted_at: record.submitted_at,
            };
            Ok((vec![LogEntry::Submission(record)], ack))
        })
    }

    pub fn export_results(&self, filter: &ResultsFilter) -> Result<ResultsExport> {
        let state = self.snapshot();
        aggregate(&state, filter, &self.maps)
    }
}

fn locate<'a>(
    state: &'a State,
    session_id: &str,
    index: usize,
) -> Result<(&'a Session, &'a Assignment, &'a EvaluationCase)> {
    let session = state
        .session(session_id)
        .ok_or_else(|| Error::NotFound(format!("session {session_id:?}")))?;
    let assignment = session.assignments.get(index).ok_or_else(|| {
        Error::NotFound(format!(
            "session {session_id:?} has {} cases, no index {index}",
            session.assignments.len()
        ))
    })?;
    let case = state
        .case(&assignment.case_id)
        .ok_or_else(|| Error::Consistency(format!("case {:?} vanished", assignment.case_id)))?;
    Ok((session, assignment, case))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultsFilter {
    #[serde(default)]
    pub dataset_tag: Option<DatasetTag>,
    #[serde(default)]
    pub abnormal: Option<bool>,
    #[serde(default)]
    pub rater_id: Option<String>,
    #[serde(default)]
    pub session_id: Option<String>,
}

impl ResultsFilter {
    fn keeps(&self, r: &SubmissionRecord, case: &EvaluationCase) -> bool {
        self.dataset_tag.is_none_or(|t| t == case.dataset_tag)
            && self.abnormal.is_none_or(|a| a == r.abnormal)
            && self.rater_id.as_ref().is_none_or(|x| *x == r.rater_id)
            && self.session_id.as_ref().is_none_or(|x| *x == r.session_id)
    }
}

/// Means and counts for one model. Means are pooled over every scored slot,
/// so with equal workloads they equal the average of the per-rater means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub n: usize,
    pub mean_accuracy: f64,
    pub mean_brevity: f64,
    pub mean_rank: f64,
    pub mean_rank_score: f64,
    /// Over slots with a rubric letter only.
    pub mean_rubric: Option<f64>,
    pub rubric_n: usize,
    /// Fraction of rubric scores at or above zero.
    pub similar_or_superior: Option<f64>,
    pub dangerous: usize,
    pub temporal_hallucinations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResults {
    pub model_id: String,
    pub overall: ScoreSummary,
    pub per_rater: BTreeMap<String, ScoreSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResults {
    /// `None` means all datasets.
    pub dataset_tag: Option<DatasetTag>,
    /// `None` means normal and abnormal cases together.
    pub abnormal: Option<bool>,
    pub submissions: usize,
    pub models: Vec<ModelResults>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsExport {
    pub filter: ResultsFilter,
    pub submissions: usize,
    pub raters: Vec<String>,
    /// The unsplit group first, then per dataset, per normal/abnormal, and
    /// per dataset and normal/abnormal. Empty groups are left out.
    pub groups: Vec<GroupResults>,
}

impl ResultsExport {
    pub fn overall(&self) -> &GroupResults {
        &self.groups[0]
    }

    pub fn model(&self, model_id: &str) -> Option<&ModelResults> {
        self.overall().models.iter().find(|m| m.model_id == model_id)
    }
}

#[derive(Default)]
struct Acc {
    n: usize,
    accuracy: f64,
    brevity: f64,
    rank: f64,
    rank_score: f64,
    rubric: f64,
    rubric_n: usize,
    similar: usize,
    dangerous: usize,
    temporal: usize,
}

impl Acc {
    fn add(&mut self, s: &SlotScores, maps: &RubricMaps) -> Result<()> {
        self.n += 1;
        self.accuracy += f64::from(maps.accuracy_score(s.accuracy)?);
        self.brevity += f64::from(maps.brevity_score(s.brevity)?);
        self.rank += f64::from(s.rank);
        self.rank_score += f64::from(maps.rank_score(s.rank)?);
        if let Some(letter) = &s.rubric {
            let v = maps.rubric_score(letter)?;
            self.rubric += f64::from(v);
            self.rubric_n += 1;
            self.similar += usize::from(v >= 0);
        }
        self.dangerous += usize::from(s.dangerous);
        self.temporal += usize::from(s.temporal_hallucination);
        Ok(())
    }

    fn summary(&self) -> ScoreSummary {
        let n = self.n as f64;
        let rubric = (self.rubric_n > 0).then_some(self.rubric_n as f64);
        ScoreSummary {
            n: self.n,
            mean_accuracy: self.accuracy / n,
            mean_brevity: self.brevity / n,
            mean_rank: self.rank / n,
            mean_rank_score: self.rank_score / n,
            mean_rubric: rubric.map(|d| self.rubric / d),
            rubric_n: self.rubric_n,
            similar_or_superior: rubric.map(|d| self.similar as f64 / d),
            dangerous: self.dangerous,
            temporal_hallucinations: self.temporal,
        }
    }
}

fn group(
    records: &[(&SubmissionRecord, &EvaluationCase)],
    dataset_tag: Option<DatasetTag>,
    abnormal: Option<bool>,
    maps: &RubricMaps,
) -> Result<Option<GroupResults>> {
    let mut overall: BTreeMap<&str, Acc> = BTreeMap::new();
    let mut per_rater: BTreeMap<(&str, &str), Acc> = BTreeMap::new();
    let mut count = 0;
    for (r, c) in records {
        if dataset_tag.is_some_and(|t| t != c.dataset_tag) || abnormal.is_some_and(|a| a != r.abnormal) {
            continue;
        }
        count += 1;
        for (model, s) in r.by_model() {
            overall.entry(model).or_default().add(s, maps)?;
            per_rater.entry((model, &r.rater_id)).or_default().add(s, maps)?;
        }
    }
    if count == 0 {
        return Ok(None);
    }
    let models = overall
        .into_iter()
        .map(|(model, acc)| ModelResults {
            model_id: model.to_string(),
            overall: acc.summary(),
            per_rater: per_rater
                .iter()
                .filter(|((m, _), _)| *m == model)
                .map(|((_, rater), a)| (rater.to_string(), a.summary()))
                .collect(),
        })
        .collect();
    Ok(Some(GroupResults {
        dataset_tag,
        abnormal,
        submissions: count,
        models,
    }))
}

fn aggregate(state: &State, filter: &ResultsFilter, maps: &RubricMaps) -> Result<ResultsExport> {
    let records: Vec<(&SubmissionRecord, &EvaluationCase)> = state
        .submissions()
        .filter_map(|r| state.case(&r.case_id).map(|c| (r, c)))
        .filter(|(r, c)| filter.keeps(r, c))
        .collect();
    if records.is_empty() {
        return Err(Error::NotFound("no submissions match the filter".into()));
    }
    let tags: BTreeSet<DatasetTag> = records.iter().map(|(_, c)| c.dataset_tag).collect();
    let mut keys: Vec<(Option<DatasetTag>, Option<bool>)> = vec![(None, None)];
    keys.extend(tags.iter().map(|&t| (Some(t), None)));
    keys.extend([false, true].map(|a| (None, Some(a))));
    for &t in &tags {
        keys.extend([false, true].map(|a| (Some(t), Some(a))));
    }
    let mut groups = Vec::new();
    for (t, a) in keys {
        if let Some(g) = group(&records, t, a, maps)? {
            groups.push(g);
        }
    }
    let raters: BTreeSet<String> = records.iter().map(|(r, _)| r.rater_id.clone()).collect();
    Ok(ResultsExport {
        filter: filter.clone(),
        submissions: records.len(),
        raters: raters.into_iter().collect(),
        groups,
    })
}

/// One row per (group, model).
pub fn results_table(export: &ResultsExport) -> TextTable {
    let mut t = TextTable::new([
        "Dataset",
        "Cases",
        "Model",
        "Rubric",
        "Similar/Superior",
        "Rank score",
        "Brevity",
        "Accuracy",
        "Dangerous",
        "Temporal",
    ]);
    for g in &export.groups {
        let dataset = match g.dataset_tag {
            None => "all",
            Some(DatasetTag::Mimic) => "mimic",
            Some(DatasetTag::Chexpert) => "chexpert",
            Some(DatasetTag::Other) => "other",
        };
        let cases = match g.abnormal {
            None => "all",
            Some(true) => "abnormal",
            Some(false) => "normal",
        };
        for m in &g.models {
            let s = &m.overall;
            t.push([
                dataset.to_string(),
                cases.to_string(),
                m.model_id.clone(),
                num(s.mean_rubric, 2),
                pct(s.similar_or_superior),
                num(Some(s.mean_rank_score), 2),
                num(Some(s.mean_brevity), 2),
                num(Some(s.mean_accuracy), 2),
                s.dangerous.to_string(),
                s.temporal_hallucinations.to_string(),
            ]);
        }
    }
    t
}

pub fn load_cases(path: impl AsRef<Path>) -> Result<Vec<EvaluationCase>> {
    let cases: Vec<EvaluationCase> = serde_json::from_str(&fs::read_to_string(path)?)?;
    for c in &cases {
        c.validate()?;
    }
    Ok(cases)
}
