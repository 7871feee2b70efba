//! Plan execution against a pluggable coder backend.
//!
//! A session is one logical chat: the runner opens a fresh session per
//! batch, seeds it with the plan preamble (plus the warm-up digest when
//! present), sends one message per item, and parses each reply into a
//! prediction. Deterministic backends (replay, noisy replay, scripted)
//! produce bit-identical runs; the HTTP backend talks a vendor-neutral
//! chat-completion wire format.

mod backends;
mod http;
mod store;

pub use backends::{
    epsilon_for_target_kappa, ConfusionModel, NoisyReplayBackend, ReplayBackend, ScriptedBackend,
};
pub use http::{HttpChatBackend, HttpChatConfig, TokenBucket};
pub use store::{resume_state, ResumeState, RunEvent, RunMeta, RunStore};

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interventions::{warmup_protocol, Batch, InterventionError, InterventionKind, PromptPlan};
use crate::taxonomy::{normalize_label, LabelScheme, Level, Normalized};

#[derive(Error, Debug)]
pub enum CoderError {
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("retries exhausted after {attempts} attempts")]
    RetryExhausted { attempts: u32 },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("scripted backend ran out of replies")]
    ScriptExhausted,
    #[error("no reference label for item {0:?}")]
    MissingGold(String),
    #[error("item {id}: {source}")]
    AtItem {
        id: String,
        #[source]
        source: Box<CoderError>,
    },
    #[error("warm-up failed: {0}")]
    Warmup(String),
    #[error("run store: {0}")]
    Store(String),
    #[error("run store does not match this plan: {0}")]
    StoreMismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Chat message role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// Dialogue state handed to a backend: the history so far plus, when the
/// runner is eliciting a label, the id of the item in play (deterministic
/// mock backends key on it; the HTTP backend ignores it).
#[derive(Debug, Clone)]
pub struct SessionState {
    pub messages: Vec<ChatMessage>,
    pub current_item: Option<String>,
}

impl SessionState {
    pub fn new(preamble: &str) -> Self {
        SessionState {
            messages: vec![ChatMessage {
                role: Role::System,
                content: preamble.to_string(),
            }],
            current_item: None,
        }
    }
}

/// A coder that can continue a chat session.
pub trait CoderBackend {
    /// Produce the reply to `message` given the session so far (the
    /// message itself is not yet part of `session.messages`).
    fn send(&mut self, session: &SessionState, message: &str) -> Result<String, CoderError>;

    /// Deterministic backends skip latency measurement so their runs are
    /// bit-identical across executions.
    fn is_deterministic(&self) -> bool;

    fn name(&self) -> String;
}

/// One parsed prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Normalized,
    pub rationale: String,
    pub raw_reply: String,
    pub latency_ms: u64,
}

/// One transcript line; session 0 is the warm-up, batches count from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub session: usize,
    pub role: Role,
    pub content: String,
}

/// The complete outcome of executing one plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingRun {
    pub kind: InterventionKind,
    pub sample_index: usize,
    pub predictions: BTreeMap<String, Prediction>,
    pub transcript: Vec<TranscriptEntry>,
    pub digest: Option<String>,
}

impl CodingRun {
    /// Predicted class name (or the unparsed category) per item id.
    pub fn predicted_names(&self) -> BTreeMap<&str, &str> {
        self.predictions
            .iter()
            .map(|(id, p)| (id.as_str(), crate::metrics::predicted_name(&p.label)))
            .collect()
    }
}

/// Parse one reply into a normalized label and rationale.
///
/// The last line of the form `Label: <text>` (key matched
/// case-insensitively, light markdown stripped, trailing punctuation
/// dropped) wins and everything above it is the rationale. Without a
/// label line the reply resolves only if exactly one distinct class name
/// or alias is mentioned; several distinct mentions stay unparsed, with
/// the last mention recorded as the nearest candidate.
pub fn parse_response(reply: &str, scheme: &LabelScheme) -> (Normalized, String) {
    let lines: Vec<&str> = reply.lines().collect();
    let mut found: Option<(usize, &str)> = None;
    for (i, line) in lines.iter().enumerate() {
        if let Some(value) = match_label_line(line) {
            found = Some((i, value));
        }
    }
    if let Some((i, value)) = found {
        let normalized = normalize_label(clean_label_value(value), Level::Major, scheme);
        let rationale = lines[..i].join("\n").trim().to_string();
        return (normalized, rationale);
    }
    let mentions = scheme.mentions(Level::Major, reply);
    let rationale = reply.trim().to_string();
    match mentions.len() {
        1 => {
            let label = normalize_label(&mentions[0].1, Level::Major, scheme);
            (label, rationale)
        }
        _ => (
            Normalized::Unparsed {
                nearest: mentions.last().map(|(_, c)| c.clone()),
            },
            rationale,
        ),
    }
}

fn match_label_line(line: &str) -> Option<&str> {
    let trimmed = line
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '#' | '-' | '>'));
    if trimmed.len() < 5 || !trimmed[..5].eq_ignore_ascii_case("label") {
        return None;
    }
    let rest = trimmed[5..].trim_start();
    rest.strip_prefix(':')
}

fn clean_label_value(value: &str) -> &str {
    value
        .trim()
        .trim_end_matches(|c: char| {
            c.is_whitespace() || matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '*' | '_' | '`' | '"' | '\'')
        })
        .trim_start_matches(|c: char| {
            c.is_whitespace() || matches!(c, '*' | '_' | '`' | '"' | '\'')
        })
}

/// Prompt text for one batch item.
pub fn format_item_prompt(id: &str, summary: &str) -> String {
    format!("Case {id}:\n{summary}")
}

/// Stable fingerprint of a plan, stored in the run log so resume can
/// refuse a log written for a different plan.
pub fn plan_digest(plan: &PromptPlan) -> String {
    use md5::{Digest, Md5};
    let mut hasher = Md5::new();
    hasher.update(serde_json::to_string(plan).expect("plan serializes"));
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn session_preamble(plan: &PromptPlan, digest: Option<&str>, batch: &Batch) -> String {
    let mut s = plan.system_preamble.clone();
    if let Some(d) = digest {
        s.push_str("\n\nRules of thumb from training:\n");
        s.push_str(d);
        s.push('\n');
    }
    s.push('\n');
    s.push_str(&batch.instruction);
    s
}

/// Execute a plan against a backend.
pub fn run_plan(
    plan: &PromptPlan,
    backend: &mut dyn CoderBackend,
    scheme: &LabelScheme,
    sample_index: usize,
) -> Result<CodingRun, CoderError> {
    execute_plan(plan, backend, scheme, sample_index, None, &mut |_| Ok(()))
}

/// Execute a plan with persistence: every event is appended to the store,
/// and an interrupted run resumes from its last completed batch (the
/// warm-up is replayed only if its digest was never recorded). A store
/// that already holds a completed run is returned as-is without touching
/// the backend.
pub fn run_plan_resumable(
    plan: &PromptPlan,
    backend: &mut dyn CoderBackend,
    scheme: &LabelScheme,
    sample_index: usize,
    store: &mut RunStore,
) -> Result<CodingRun, CoderError> {
    let resume = if store.exists() {
        let events = store.load_events()?;
        let state = resume_state(&events);
        if let Some(meta) = &state.meta {
            if meta.kind != plan.kind
                || meta.sample_index != sample_index
                || meta.batches != plan.batches.len()
                || meta.plan_digest != plan_digest(plan)
            {
                return Err(CoderError::StoreMismatch(format!(
                    "store holds {:?} sample {} with {} batches (digest {})",
                    meta.kind, meta.sample_index, meta.batches, meta.plan_digest
                )));
            }
        }
        if state.done {
            return Ok(CodingRun {
                kind: plan.kind,
                sample_index,
                predictions: state.predictions,
                transcript: state.transcript,
                digest: state.digest,
            });
        }
        Some(state)
    } else {
        None
    };
    execute_plan(plan, backend, scheme, sample_index, resume, &mut |event| {
        store.append(event)
    })
}

fn execute_plan(
    plan: &PromptPlan,
    backend: &mut dyn CoderBackend,
    scheme: &LabelScheme,
    sample_index: usize,
    resume: Option<ResumeState>,
    sink: &mut dyn FnMut(&RunEvent) -> Result<(), CoderError>,
) -> Result<CodingRun, CoderError> {
    let mut run = CodingRun {
        kind: plan.kind,
        sample_index,
        predictions: BTreeMap::new(),
        transcript: Vec::new(),
        digest: None,
    };
    let completed_batches = match resume {
        Some(state) => {
            run.digest = state.digest;
            run.predictions = state.predictions;
            run.transcript = state.transcript;
            state.completed_batches
        }
        None => {
            sink(&RunEvent::Meta {
                kind: plan.kind,
                sample_index,
                batches: plan.batches.len(),
                backend: backend.name(),
                plan_digest: plan_digest(plan),
            })?;
            0
        }
    };

    if !plan.warmup.is_empty() && run.digest.is_none() {
        sink(&RunEvent::WarmupStart)?;
        let outcome = match warmup_protocol(plan, backend, scheme) {
            Ok(outcome) => outcome,
            Err(InterventionError::Backend(e)) => return Err(e),
            Err(other) => return Err(CoderError::Warmup(other.to_string())),
        };
        for msg in &outcome.messages {
            let entry = TranscriptEntry {
                session: 0,
                role: msg.role,
                content: msg.content.clone(),
            };
            sink(&RunEvent::Msg(entry.clone()))?;
            run.transcript.push(entry);
        }
        sink(&RunEvent::Digest {
            text: outcome.digest.clone(),
        })?;
        run.digest = Some(outcome.digest);
    }

    let deterministic = backend.is_deterministic();
    for (bi, batch) in plan.batches.iter().enumerate() {
        if bi < completed_batches {
            continue;
        }
        sink(&RunEvent::BatchStart { index: bi })?;
        let session_no = bi + 1;
        let preamble = session_preamble(plan, run.digest.as_deref(), batch);
        let mut session = SessionState::new(&preamble);
        let log = |run: &mut CodingRun,
                       sink: &mut dyn FnMut(&RunEvent) -> Result<(), CoderError>,
                       role: Role,
                       content: &str|
         -> Result<(), CoderError> {
            let entry = TranscriptEntry {
                session: session_no,
                role,
                content: content.to_string(),
            };
            sink(&RunEvent::Msg(entry.clone()))?;
            run.transcript.push(entry);
            Ok(())
        };
        log(&mut run, sink, Role::System, &preamble)?;
        for item in &batch.items {
            session.current_item = Some(item.id.clone());
            let prompt = format_item_prompt(&item.id, &item.summary);
            let started = Instant::now();
            let reply = backend.send(&session, &prompt).map_err(|e| CoderError::AtItem {
                id: item.id.clone(),
                source: Box::new(e),
            })?;
            let latency_ms = if deterministic {
                0
            } else {
                started.elapsed().as_millis() as u64
            };
            session.messages.push(ChatMessage {
                role: Role::User,
                content: prompt.clone(),
            });
            session.messages.push(ChatMessage {
                role: Role::Assistant,
                content: reply.clone(),
            });
            log(&mut run, sink, Role::User, &prompt)?;
            log(&mut run, sink, Role::Assistant, &reply)?;
            let (label, rationale) = parse_response(&reply, scheme);
            let prediction = Prediction {
                label,
                rationale,
                raw_reply: reply,
                latency_ms,
            };
            sink(&RunEvent::Pred {
                id: item.id.clone(),
                prediction: prediction.clone(),
            })?;
            run.predictions.insert(item.id.clone(), prediction);
        }
        sink(&RunEvent::BatchEnd { index: bi })?;
    }
    sink(&RunEvent::Done)?;

    debug_assert_eq!(
        run.predictions.len(),
        plan.item_ids().len(),
        "predictions must cover exactly the sample"
    );
    Ok(run)
}

/// Run many plans with up to `concurrency` sessions in flight. Results
/// come back in request order regardless of completion order. Each
/// request gets its own backend from `make_backend` (which may share a
/// rate limiter across them); when `store_for` returns a path the run is
/// resumable.
pub fn run_all(
    requests: &[(PromptPlan, usize)],
    scheme: &LabelScheme,
    concurrency: usize,
    make_backend: &(dyn Fn(&PromptPlan, usize) -> Result<Box<dyn CoderBackend + Send>, CoderError>
          + Sync),
    store_for: &(dyn Fn(&PromptPlan, usize) -> Option<std::path::PathBuf> + Sync),
) -> Result<Vec<CodingRun>, CoderError> {
    use std::sync::Mutex;
    let concurrency = concurrency.max(1);
    let queue: Mutex<std::collections::VecDeque<usize>> =
        Mutex::new((0..requests.len()).collect());
    let results: Mutex<Vec<Option<Result<CodingRun, CoderError>>>> =
        Mutex::new((0..requests.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..concurrency.min(requests.len().max(1)) {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").pop_front();
                let Some(i) = next else { break };
                let (plan, sample_index) = &requests[i];
                let outcome = make_backend(plan, *sample_index).and_then(|mut backend| {
                    match store_for(plan, *sample_index) {
                        Some(path) => {
                            let mut store = RunStore::new(path);
                            run_plan_resumable(
                                plan,
                                backend.as_mut(),
                                scheme,
                                *sample_index,
                                &mut store,
                            )
                        }
                        None => run_plan(plan, backend.as_mut(), scheme, *sample_index),
                    }
                });
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every request processed"))
        .collect()
}
