//! Deterministic coder backends for testing and calibration.

use std::collections::{BTreeMap, HashMap, VecDeque};

use md5::{Digest, Md5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CoderBackend, CoderError, Role, SessionState, TranscriptEntry};
use crate::dataset::Corpus;
use crate::taxonomy::LabelScheme;

const DIGEST_REPLY: &str = "Rules of thumb: anchor the label on the central policy issue, \
prefer the most specific applicable class, and fall back to the residual class only when \
nothing else fits.";

/// Answers every item with its reference label.
pub struct ReplayBackend {
    gold: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn new(gold: HashMap<String, String>) -> Self {
        ReplayBackend { gold }
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        ReplayBackend {
            gold: corpus
                .records
                .iter()
                .map(|r| (r.id.clone(), r.gold_major.name.clone()))
                .collect(),
        }
    }
}

impl CoderBackend for ReplayBackend {
    fn send(&mut self, session: &SessionState, _message: &str) -> Result<String, CoderError> {
        match &session.current_item {
            Some(id) => {
                let gold = self
                    .gold
                    .get(id)
                    .ok_or_else(|| CoderError::MissingGold(id.clone()))?;
                Ok(format!("The reference coding applies.\nLabel: {gold}"))
            }
            None => Ok(DIGEST_REPLY.to_string()),
        }
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        "replay".to_string()
    }
}

/// How a noisy replay picks a wrong class when it errs.
#[derive(Debug, Clone)]
pub enum ConfusionModel {
    /// Uniform over the other classes.
    Uniform,
    /// Per-gold-class weighted distribution over wrong classes.
    Weighted(BTreeMap<String, Vec<(String, f64)>>),
}

/// Answers the reference label except with probability epsilon, when it
/// draws a wrong class from the confusion model. The draw is keyed on
/// (seed, item id), so results do not depend on call order and survive
/// resume.
pub struct NoisyReplayBackend {
    gold: HashMap<String, String>,
    classes: Vec<String>,
    epsilon: f64,
    confusion: ConfusionModel,
    seed: u64,
}

impl NoisyReplayBackend {
    pub fn new(
        gold: HashMap<String, String>,
        classes: Vec<String>,
        epsilon: f64,
        confusion: ConfusionModel,
        seed: u64,
    ) -> Self {
        assert!((0.0..=1.0).contains(&epsilon), "epsilon must be in [0, 1]");
        NoisyReplayBackend {
            gold,
            classes,
            epsilon,
            confusion,
            seed,
        }
    }

    /// Uniform confusion over the scheme's major classes.
    pub fn uniform(corpus: &Corpus, scheme: &LabelScheme, epsilon: f64, seed: u64) -> Self {
        Self::new(
            corpus
                .records
                .iter()
                .map(|r| (r.id.clone(), r.gold_major.name.clone()))
                .collect(),
            scheme.major_names().iter().map(|s| s.to_string()).collect(),
            epsilon,
            ConfusionModel::Uniform,
            seed,
        )
    }

    fn item_rng(&self, id: &str) -> ChaCha8Rng {
        let mut hasher = Md5::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(id.as_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(bytes))
    }

    fn draw(&self, id: &str, gold: &str) -> String {
        let mut rng = self.item_rng(id);
        if rng.gen::<f64>() >= self.epsilon {
            return gold.to_string();
        }
        match &self.confusion {
            ConfusionModel::Uniform => {
                let others: Vec<&String> =
                    self.classes.iter().filter(|c| c.as_str() != gold).collect();
                if others.is_empty() {
                    return gold.to_string();
                }
                others[rng.gen_range(0..others.len())].clone()
            }
            ConfusionModel::Weighted(rows) => match rows.get(gold) {
                Some(row) if !row.is_empty() => {
                    let total: f64 = row.iter().map(|(_, w)| w).sum();
                    let mut u = rng.gen::<f64>() * total;
                    for (name, w) in row {
                        if u < *w {
                            return name.clone();
                        }
                        u -= w;
                    }
                    row.last().expect("nonempty").0.clone()
                }
                _ => gold.to_string(),
            },
        }
    }
}

impl CoderBackend for NoisyReplayBackend {
    fn send(&mut self, session: &SessionState, _message: &str) -> Result<String, CoderError> {
        match &session.current_item {
            Some(id) => {
                let gold = self
                    .gold
                    .get(id)
                    .ok_or_else(|| CoderError::MissingGold(id.clone()))?
                    .clone();
                let answer = self.draw(id, &gold);
                Ok(format!("The summary points to this class.\nLabel: {answer}"))
            }
            None => Ok(DIGEST_REPLY.to_string()),
        }
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        format!("noisy-replay(eps={})", self.epsilon)
    }
}

/// Returns prerecorded replies in order; used to replay transcripts.
pub struct ScriptedBackend {
    replies: VecDeque<String>,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<String>) -> Self {
        ScriptedBackend {
            replies: replies.into(),
        }
    }

    /// Extract the assistant turns of a recorded transcript, in order.
    pub fn from_transcript(transcript: &[TranscriptEntry]) -> Self {
        Self::new(
            transcript
                .iter()
                .filter(|t| t.role == Role::Assistant)
                .map(|t| t.content.clone())
                .collect(),
        )
    }
}

impl CoderBackend for ScriptedBackend {
    fn send(&mut self, _session: &SessionState, _message: &str) -> Result<String, CoderError> {
        self.replies.pop_front().ok_or(CoderError::ScriptExhausted)
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        "scripted".to_string()
    }
}

/// Tune a uniform-confusion noisy replay so its expected Cohen's kappa
/// against gold hits `target`. `confusion_classes` is the size of the
/// class list the backend draws wrong answers from (the scheme's class
/// count, which may exceed the classes present in the gold
/// distribution). Returns the epsilon found by bisection on the analytic
/// kappa.
pub fn epsilon_for_target_kappa(
    gold_distribution: &BTreeMap<String, f64>,
    confusion_classes: usize,
    target: f64,
) -> f64 {
    assert!(confusion_classes >= 2);
    let k = confusion_classes as f64;
    let expected_kappa = |eps: f64| -> f64 {
        let p_o = 1.0 - eps;
        // predicted marginal under uniform confusion over the other
        // k - 1 scheme classes
        let mut p_e = 0.0;
        for (_, &g) in gold_distribution.iter() {
            let q = g * (1.0 - eps) + eps * (1.0 - g) / (k - 1.0);
            p_e += g * q;
        }
        (p_o - p_e) / (1.0 - p_e)
    };
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_kappa(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
