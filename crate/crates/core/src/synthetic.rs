//! Synthetic corpus generation for tests and demos.
//!
//! Generates labeled case summaries with the heavily skewed class mix
//! typical of the CAP Supreme Court corpus (a handful of dominant classes,
//! a long tail near the rare-class exclusion threshold). Output is fully
//! deterministic for a given seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{CaseRecord, Corpus};
use crate::taxonomy::{LabelScheme, Level};

/// Relative class weights: (major code, weight). Skew mirrors the CAP
/// Supreme Court distribution shape, with Law and Crime dominant.
pub const CAP_LIKE_WEIGHTS: &[(i64, u32)] = &[
    (1, 30),   // Macroeconomics
    (2, 204),  // Civil Rights
    (3, 30),   // Health
    (4, 29),   // Agriculture
    (5, 119),  // Labor
    (6, 30),   // Education
    (7, 30),   // Environment
    (8, 29),   // Energy
    (9, 30),   // Immigration
    (10, 60),  // Transportation
    (12, 415), // Law and Crime
    (13, 27),  // Social Welfare
    (14, 30),  // Housing
    (15, 177), // Domestic Commerce
    (16, 29),  // Defense
    (17, 30),  // Technology
    (18, 30),  // Foreign Trade
    (19, 28),  // International Affairs
    (20, 88),  // Government Operations
    (21, 26),  // Public Lands
    (23, 29),  // Culture
];

const SUBJECTS: &[&str] = &[
    "The petitioner",
    "A federal agency",
    "The state commission",
    "An appellate panel",
    "The respondent company",
    "A municipal board",
    "The trade association",
    "A group of employees",
];

const ACTIONS: &[&str] = &[
    "challenged the regulation",
    "sought review of the order",
    "contested the statutory interpretation",
    "appealed the lower ruling",
    "disputed the assessed penalty",
    "moved to enjoin enforcement",
    "petitioned for a rehearing",
    "objected to the licensing decision",
];

const OUTCOMES: &[&str] = &[
    "The court reversed and remanded",
    "The judgment was affirmed in part",
    "Certiorari was granted on a narrow question",
    "The court vacated the decree",
    "The claim was dismissed for lack of standing",
    "The court upheld the administrative record",
];

const TOPICS: &[&str] = &[
    "the dispute turned on procedural grounds",
    "the record showed conflicting findings below",
    "the parties stipulated to the material facts",
    "the statute's scope was the central question",
    "two circuits had reached opposite conclusions",
];

/// Generate a CAP-shaped synthetic corpus of `rows` records.
pub fn generate_corpus(scheme: &LabelScheme, rows: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<(i64, u32)> = CAP_LIKE_WEIGHTS
        .iter()
        .filter(|(code, _)| scheme.resolve_code(Level::Major, *code).is_some())
        .copied()
        .collect();
    let total: u64 = weights.iter().map(|(_, w)| *w as u64).sum();
    let mut records = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut pick = rng.gen_range(0..total);
        let mut code = weights[0].0;
        for (c, w) in &weights {
            if pick < *w as u64 {
                code = *c;
                break;
            }
            pick -= *w as u64;
        }
        let gold_major = scheme
            .resolve_code(Level::Major, code)
            .expect("weight codes filtered against scheme");
        let id = format!("case-{i:05}");
        let summary = synth_summary(&mut rng, i);
        records.push(CaseRecord {
            id,
            summary,
            gold_major,
            gold_sub: None,
        });
    }
    Corpus::from_records(records)
}

fn synth_summary(rng: &mut ChaCha8Rng, index: usize) -> String {
    let n_sentences = rng.gen_range(2..=5);
    let mut sentences = Vec::with_capacity(n_sentences + 1);
    sentences.push(format!(
        "{} {} in docket {}.",
        SUBJECTS.choose(rng).unwrap(),
        ACTIONS.choose(rng).unwrap(),
        index
    ));
    for _ in 1..n_sentences {
        if rng.gen_bool(0.5) {
            sentences.push(format!("{}.", OUTCOMES.choose(rng).unwrap()));
        } else {
            let t = TOPICS.choose(rng).unwrap();
            let mut chars = t.chars();
            let first = chars.next().unwrap().to_uppercase().to_string();
            sentences.push(format!("{}{}.", first, chars.as_str()));
        }
    }
    sentences.join(" ")
}

/// Render a corpus as CSV in the ingest format (numeric label codes).
pub fn corpus_to_csv(corpus: &Corpus) -> String {
    let mut out = String::from("id,summary,major_code,sub_code\n");
    for rec in &corpus.records {
        let summary = if rec.summary.contains(',') || rec.summary.contains('"') {
            format!("\"{}\"", rec.summary.replace('"', "\"\""))
        } else {
            rec.summary.clone()
        };
        let sub = rec
            .gold_sub
            .as_ref()
            .map(|s| s.code.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            rec.id, summary, rec.gold_major.code, sub
        ));
    }
    out
}
