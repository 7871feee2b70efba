//! Append-only event log for resumable coding runs.
//!
//! Each run is one JSON Lines file of tagged events. Resume scans the
//! log: batches commit on their `batch_end`, the warm-up commits on its
//! `digest`, and anything after the last commit point is discarded, so a
//! rerun repeats only the interrupted unit of work.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{CoderError, Prediction, TranscriptEntry};
use crate::interventions::InterventionKind;

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum RunEvent {
    Meta {
        kind: InterventionKind,
        sample_index: usize,
        batches: usize,
        /// Backend/model identifier, recorded for audit; resume does not
        /// require it to match (deterministic replays may differ).
        backend: String,
        /// Fingerprint of the plan; resume refuses a log written for a
        /// different plan.
        plan_digest: String,
    },
    WarmupStart,
    Digest {
        text: String,
    },
    Msg(TranscriptEntry),
    Pred {
        id: String,
        prediction: Prediction,
    },
    BatchStart {
        index: usize,
    },
    BatchEnd {
        index: usize,
    },
    Done,
}

/// File-backed event sink for one (kind, sample) run.
pub struct RunStore {
    path: PathBuf,
    file: Option<File>,
}

impl RunStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RunStore {
            path: path.into(),
            file: None,
        }
    }

    pub fn path(&self) -> &std::path::Path {
        &self.path
    }

    pub fn exists(&self) -> bool {
        self.path.exists()
    }

    pub fn append(&mut self, event: &RunEvent) -> Result<(), CoderError> {
        if self.file.is_none() {
            if let Some(parent) = self.path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            self.file = Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&self.path)?,
            );
        }
        let file = self.file.as_mut().expect("opened above");
        let line = serde_json::to_string(event).map_err(|e| CoderError::Store(e.to_string()))?;
        writeln!(file, "{line}")?;
        file.flush()?;
        Ok(())
    }

    pub fn load_events(&self) -> Result<Vec<RunEvent>, CoderError> {
        let file = File::open(&self.path)?;
        let mut events = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: RunEvent = serde_json::from_str(&line)
                .map_err(|e| CoderError::Store(format!("line {}: {e}", i + 1)))?;
            events.push(event);
        }
        Ok(events)
    }
}

/// Identity of the run a log belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMeta {
    pub kind: InterventionKind,
    pub sample_index: usize,
    pub batches: usize,
    pub plan_digest: String,
}

/// Committed progress reconstructed from a run log.
#[derive(Debug, Default, Clone)]
pub struct ResumeState {
    pub meta: Option<RunMeta>,
    pub digest: Option<String>,
    pub completed_batches: usize,
    pub predictions: BTreeMap<String, Prediction>,
    pub transcript: Vec<TranscriptEntry>,
    pub done: bool,
}

/// Fold an event log into its committed state.
pub fn resume_state(events: &[RunEvent]) -> ResumeState {
    let mut state = ResumeState::default();
    let mut warmup_pending: Vec<TranscriptEntry> = Vec::new();
    let mut batch_msgs: Vec<TranscriptEntry> = Vec::new();
    let mut batch_preds: Vec<(String, Prediction)> = Vec::new();
    for event in events {
        match event {
            RunEvent::Meta {
                kind,
                sample_index,
                batches,
                plan_digest,
                ..
            } => {
                state.meta = Some(RunMeta {
                    kind: *kind,
                    sample_index: *sample_index,
                    batches: *batches,
                    plan_digest: plan_digest.clone(),
                })
            }
            RunEvent::WarmupStart => warmup_pending.clear(),
            RunEvent::Msg(entry) => {
                if entry.session == 0 {
                    warmup_pending.push(entry.clone());
                } else {
                    batch_msgs.push(entry.clone());
                }
            }
            RunEvent::Digest { text } => {
                state.digest = Some(text.clone());
                state.transcript.append(&mut warmup_pending);
            }
            RunEvent::BatchStart { .. } => {
                batch_msgs.clear();
                batch_preds.clear();
            }
            RunEvent::Pred { id, prediction } => {
                batch_preds.push((id.clone(), prediction.clone()));
            }
            RunEvent::BatchEnd { index } => {
                state.transcript.append(&mut batch_msgs);
                for (id, pred) in batch_preds.drain(..) {
                    state.predictions.insert(id, pred);
                }
                state.completed_batches = index + 1;
            }
            RunEvent::Done => state.done = true,
        }
    }
    state
}
