//! Review store: an append-only JSONL event log replayed into an in-memory
//! index. Mutations are serialized through one writer lock; reads take a
//! shared lock on the index.

mod images;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use images::{ImageStore, StoredImage};

use crate::dataset::{canonical_json, render_export, ExportError, RenderedExport, ReviewInfo, ReviewStatus, TrainingRecord};
use crate::domain::{has_errors, validate_triplet, DialogueTriplet, Phase, Provenance, StructureMode, Violation};

pub const MAX_PAGE_SIZE: usize = 200;
pub const DEFAULT_PAGE_SIZE: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("record '{0}' already exists")]
    DuplicateRecord(String),
    #[error("unknown record '{0}'")]
    UnknownRecord(String),
    #[error("cannot {action} record '{record_id}' in status {from}")]
    InvalidTransition { record_id: String, from: &'static str, action: ReviewAction },
    #[error("edited answer must be non-empty")]
    EmptyEdit,
    #[error("record has no {0} turn")]
    MissingTurn(Phase),
    #[error("invalid triplet: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidTriplet(Vec<Violation>),
    #[error("event log {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("event log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error(transparent)]
    Export(#[from] ExportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewAction {
    Approve,
    Reject,
    Edit,
}

impl std::fmt::Display for ReviewAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReviewAction::Approve => "approve",
            ReviewAction::Reject => "reject",
            ReviewAction::Edit => "edit",
        })
    }
}

/// Body of a review submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewRequest {
    pub action: ReviewAction,
    /// Turn to edit; the target turn when absent.
    #[serde(default)]
    pub turn_phase: Option<Phase>,
    #[serde(default)]
    pub edited_answer: Option<String>,
    pub reviewer: String,
    #[serde(default)]
    pub note: Option<String>,
}

impl ReviewRequest {
    pub fn approve(reviewer: &str) -> Self {
        Self { action: ReviewAction::Approve, turn_phase: None, edited_answer: None, reviewer: reviewer.into(), note: None }
    }

    pub fn reject(reviewer: &str) -> Self {
        Self { action: ReviewAction::Reject, ..Self::approve(reviewer) }
    }

    pub fn edit(reviewer: &str, phase: Phase, answer: &str) -> Self {
        Self {
            action: ReviewAction::Edit,
            turn_phase: Some(phase),
            edited_answer: Some(answer.into()),
            ..Self::approve(reviewer)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum EventKind {
    Created { triplet: Box<DialogueTriplet> },
    Approved,
    Rejected,
    Edited { turn_phase: Phase, answer: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewEvent {
    pub event_id: u64,
    pub record_id: String,
    #[serde(flatten)]
    pub kind: EventKind,
    #[serde(default)]
    pub reviewer: Option<String>,
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub note: Option<String>,
}

/// Current state of one dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueState {
    pub triplet: DialogueTriplet,
    pub review: ReviewInfo,
    pub event_count: usize,
}

impl DialogueState {
    pub fn status(&self) -> ReviewStatus {
        self.review.status
    }

    pub fn record(&self) -> TrainingRecord {
        TrainingRecord::from_triplet(&self.triplet, self.review.clone())
    }

    pub fn view(&self) -> DialogueView {
        DialogueView {
            record_id: self.triplet.record_id.clone(),
            status: self.review.status,
            flagged: self.triplet.is_flagged(),
            created_at: self.triplet.created_at,
            record: self.record(),
        }
    }
}

/// A dialogue as served to reviewers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueView {
    pub record_id: String,
    pub status: ReviewStatus,
    pub flagged: bool,
    pub created_at: DateTime<Utc>,
    pub record: TrainingRecord,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ListFilter {
    #[serde(default)]
    pub status: Option<ReviewStatus>,
    #[serde(default, alias = "concept")]
    pub concept_id: Option<String>,
    #[serde(default)]
    pub flagged: Option<bool>,
    /// 1-based.
    #[serde(default)]
    pub page: Option<usize>,
    #[serde(default)]
    pub page_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub items: Vec<DialogueView>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
}

/// Replayable in-memory index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Index {
    states: HashMap<String, DialogueState>,
    next_event_id: u64,
}

impl Index {
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a ReviewEvent>) -> Result<Self, CurationError> {
        let mut index = Self::default();
        for event in events {
            index.apply(event)?;
        }
        Ok(index)
    }

    pub fn get(&self, record_id: &str) -> Option<&DialogueState> {
        self.states.get(record_id)
    }

    /// States in (created_at, record_id) order.
    pub fn ordered(&self) -> Vec<&DialogueState> {
        let mut all: Vec<&DialogueState> = self.states.values().collect();
        all.sort_by(|a, b| {
            (a.triplet.created_at, &a.triplet.record_id).cmp(&(b.triplet.created_at, &b.triplet.record_id))
        });
        all
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Checks that `event` is a legal next step without applying it.
    pub fn check(&self, event: &ReviewEvent) -> Result<(), CurationError> {
        let id = &event.record_id;
        match (&event.kind, self.states.get(id)) {
            (EventKind::Created { .. }, Some(_)) => Err(CurationError::DuplicateRecord(id.clone())),
            (EventKind::Created { triplet }, None) => {
                let violations = validate_triplet(triplet, None);
                if has_errors(&violations) {
                    return Err(CurationError::InvalidTriplet(violations));
                }
                Ok(())
            }
            (_, None) => Err(CurationError::UnknownRecord(id.clone())),
            (kind, Some(state)) => {
                let from = state.review.status;
                let (action, allowed) = match kind {
                    EventKind::Approved => (ReviewAction::Approve, from != ReviewStatus::Rejected),
                    EventKind::Rejected => (ReviewAction::Reject, from != ReviewStatus::Rejected),
                    EventKind::Edited { turn_phase, answer } => {
                        if answer.trim().is_empty() {
                            return Err(CurationError::EmptyEdit);
                        }
                        if state.triplet.turn(*turn_phase).is_none() {
                            return Err(CurationError::MissingTurn(*turn_phase));
                        }
                        (ReviewAction::Edit, true)
                    }
                    EventKind::Created { .. } => unreachable!("handled above"),
                };
                if allowed {
                    Ok(())
                } else {
                    Err(CurationError::InvalidTransition { record_id: id.clone(), from: from.as_str(), action })
                }
            }
        }
    }

    pub fn apply(&mut self, event: &ReviewEvent) -> Result<&DialogueState, CurationError> {
        self.check(event)?;
        self.next_event_id = self.next_event_id.max(event.event_id + 1);
        let reviewed = |status| ReviewInfo {
            status,
            reviewer: event.reviewer.clone(),
            timestamp: Some(event.timestamp),
            note: event.note.clone(),
        };
        let id = event.record_id.clone();
        match &event.kind {
            EventKind::Created { triplet } => {
                self.states.insert(
                    id.clone(),
                    DialogueState { triplet: (**triplet).clone(), review: ReviewInfo::pending(), event_count: 1 },
                );
            }
            kind => {
                let state = self.states.get_mut(&id).expect("checked");
                state.event_count += 1;
                match kind {
                    EventKind::Approved => state.review = reviewed(ReviewStatus::Approved),
                    EventKind::Rejected => state.review = reviewed(ReviewStatus::Rejected),
                    EventKind::Edited { turn_phase, answer } => {
                        let turn = state.triplet.turns.iter_mut().find(|t| t.phase == *turn_phase).expect("checked");
                        turn.answer = answer.trim().to_string();
                        turn.answer_provenance = Provenance::HumanEdit;
                        state.review = reviewed(ReviewStatus::Edited);
                    }
                    EventKind::Created { .. } => unreachable!(),
                }
            }
        }
        Ok(&self.states[&id])
    }
}

type Clock = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

struct Writer {
    log: Option<(PathBuf, File)>,
    /// Every accepted event, in order; kept for replay checks and audits.
    events: Vec<ReviewEvent>,
}

pub struct CurationStore {
    index: RwLock<Index>,
    writer: Mutex<Writer>,
    images: ImageStore,
    clock: Clock,
}

impl CurationStore {
    /// A store without persistence.
    pub fn in_memory() -> Self {
        Self {
            index: RwLock::new(Index::default()),
            writer: Mutex::new(Writer { log: None, events: Vec::new() }),
            images: ImageStore::in_memory(),
            clock: Box::new(Utc::now),
        }
    }

    /// Opens (or creates) a store directory holding `events.jsonl` and
    /// `images/`, replaying the log. A torn final line from an interrupted
    /// write is ignored.
    pub fn open(dir: &Path) -> Result<Self, CurationError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CurationError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let log_path = dir.join("events.jsonl");
        let events = if log_path.exists() {
            drop_torn_tail(&log_path).map_err(io(&log_path))?;
            read_log(&log_path)?
        } else {
            Vec::new()
        };
        let index = Index::replay(&events)?;
        let file = OpenOptions::new().create(true).append(true).open(&log_path).map_err(io(&log_path))?;
        Ok(Self {
            index: RwLock::new(index),
            writer: Mutex::new(Writer { log: Some((log_path, file)), events }),
            images: ImageStore::open(&dir.join("images")).map_err(io(&dir.join("images")))?,
            clock: Box::new(Utc::now),
        })
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn images(&self) -> &ImageStore {
        &self.images
    }

    fn commit(&self, record_id: &str, kind: EventKind, reviewer: Option<String>, note: Option<String>) -> Result<DialogueState, CurationError> {
        let mut writer = self.writer.lock();
        let event = ReviewEvent {
            event_id: self.index.read().next_event_id,
            record_id: record_id.to_string(),
            kind,
            reviewer,
            timestamp: (self.clock)(),
            note,
        };
        self.index.read().check(&event)?;
        if let Some((path, file)) = writer.log.as_mut() {
            let line = canonical_json(&serde_json::to_value(&event).expect("events serialize"));
            file.write_all(format!("{line}\n").as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|source| CurationError::Io { path: path.clone(), source })?;
        }
        let state = self.index.write().apply(&event)?.clone();
        writer.events.push(event);
        Ok(state)
    }

    /// Stores a new triplet as pending.
    pub fn record_dialogue(&self, triplet: DialogueTriplet) -> Result<String, CurationError> {
        let id = triplet.record_id.clone();
        self.commit(&id, EventKind::Created { triplet: Box::new(triplet) }, None, None)?;
        Ok(id)
    }

    pub fn review(&self, record_id: &str, request: ReviewRequest) -> Result<DialogueState, CurationError> {
        let kind = match request.action {
            ReviewAction::Approve => EventKind::Approved,
            ReviewAction::Reject => EventKind::Rejected,
            ReviewAction::Edit => EventKind::Edited {
                turn_phase: request.turn_phase.unwrap_or(Phase::Target),
                answer: request.edited_answer.filter(|a| !a.trim().is_empty()).ok_or(CurationError::EmptyEdit)?,
            },
        };
        if !self.index.read().states.contains_key(record_id) {
            return Err(CurationError::UnknownRecord(record_id.to_string()));
        }
        self.commit(record_id, kind, Some(request.reviewer), request.note)
    }

    pub fn get(&self, record_id: &str) -> Option<DialogueState> {
        self.index.read().get(record_id).cloned()
    }

    pub fn list(&self, filter: &ListFilter) -> Page {
        let page = filter.page.unwrap_or(1).max(1);
        let page_size = filter.page_size.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);
        let index = self.index.read();
        let matching: Vec<&DialogueState> = index
            .ordered()
            .into_iter()
            .filter(|s| filter.status.is_none_or(|st| s.review.status == st))
            .filter(|s| filter.concept_id.as_deref().is_none_or(|c| s.triplet.concept_id == c))
            .filter(|s| filter.flagged.is_none_or(|f| s.triplet.is_flagged() == f))
            .collect();
        let items = matching.iter().skip((page - 1) * page_size).take(page_size).map(|s| s.view()).collect();
        Page { items, page, page_size, total: matching.len() }
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        let index = self.index.read();
        crate::domain::count_by(index.states.values().map(|s| s.review.status.as_str()))
    }

    /// Current records in (created_at, record_id) order.
    pub fn records(&self) -> Vec<TrainingRecord> {
        self.index.read().ordered().into_iter().map(DialogueState::record).collect()
    }

    pub fn export(&self, mode: StructureMode, approved_only: bool) -> Result<RenderedExport, CurationError> {
        Ok(render_export(&self.records(), mode, approved_only)?)
    }

    pub fn export_approved(&self, mode: StructureMode) -> Result<RenderedExport, CurationError> {
        self.export(mode, true)
    }

    pub fn events(&self) -> Vec<ReviewEvent> {
        self.writer.lock().events.clone()
    }

    /// A copy of the live index, for comparing against a replay.
    pub fn snapshot(&self) -> Index {
        self.index.read().clone()
    }
}

/// Truncates a final line that was cut off mid-write, so appends start clean.
fn drop_torn_tail(path: &Path) -> std::io::Result<()> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    tracing::warn!(path = %path.display(), dropped = bytes.len() - keep, "dropping torn final event log line");
    OpenOptions::new().write(true).open(path)?.set_len(keep as u64)
}

/// Parses an event log. Only a final line without a newline may be torn.
pub fn read_log(path: &Path) -> Result<Vec<ReviewEvent>, CurationError> {
    let text = std::fs::read_to_string(path).map_err(|source| CurationError::Io { path: path.to_path_buf(), source })?;
    parse_log(&text)
}

pub fn parse_log(text: &str) -> Result<Vec<ReviewEvent>, CurationError> {
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ReviewEvent>(line) {
            Ok(event) => events.push(event),
            Err(_) if i + 1 == lines.len() && !complete => {
                tracing::warn!(line = i + 1, "ignoring torn final event log line");
            }
            Err(e) => return Err(CurationError::CorruptLog { line: i + 1, message: e.to_string() }),
        }
    }
    Ok(events)
}
