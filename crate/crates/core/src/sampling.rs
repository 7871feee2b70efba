//! Stratified repeated-measures sampling and the expected-frequency
//! design search.
//!
//! Samples are drawn proportionally by major class using largest-remainder
//! apportionment (remainder ties break by ascending class name) and a
//! seeded generator, so a (corpus, n, seed) triple always yields the same
//! sample. The design search walks candidate sample sizes downward and
//! sample counts upward until every pairwise contingency table satisfies
//! the 80%-of-expected-frequencies-at-least-5 rule.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Corpus;
use crate::taxonomy::Level;

/// Expected cell count threshold for chi-squared validity.
pub const EXPECTED_MIN: f64 = 5.0;

#[derive(Error, Debug)]
pub enum SamplingError {
    #[error("corpus is empty after rare-class exclusion")]
    EmptyCorpusAfterExclusion,
    #[error("requested sample of {requested} from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("stratum {0:?} has fewer records than its allocation")]
    StratumExhausted(String),
    #[error("contingency table has a zero row or zero column")]
    DegenerateTable,
    #[error("count vectors must share one class list")]
    VectorLengthMismatch,
    #[error("need at least two count vectors")]
    TooFewVectors,
    #[error("sublabel sampling requires a corpus preprocessed in sublabel mode")]
    MissingSublabel,
    #[error("no design satisfied the assumption; best pairwise fraction {best_fraction:.3}")]
    NoDesignFound { best_fraction: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("sample set file: {0}")]
    BadFile(String),
}

/// Outcome of testing the expected-frequency assumption on one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub cells_total: usize,
    pub cells_ok: usize,
    pub fraction_ok: f64,
    pub passed: bool,
}

impl AssumptionCheck {
    fn new(cells_ok: usize, cells_total: usize) -> Self {
        // integer comparison keeps the 80% boundary exact
        let passed = 5 * cells_ok >= 4 * cells_total;
        AssumptionCheck {
            cells_total,
            cells_ok,
            fraction_ok: cells_ok as f64 / cells_total as f64,
            passed,
        }
    }
}

/// N stratified samples of n record ids each.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub n: usize,
    #[serde(rename = "N")]
    pub count: usize,
    pub excluded: Vec<String>,
    pub samples: Vec<Vec<String>>,
    /// Per-sample class counts; rebuilt from the corpus, not persisted.
    #[serde(skip)]
    pub strata: Vec<BTreeMap<String, usize>>,
}

impl SampleSet {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SamplingError> {
        let mut file = std::fs::File::create(path)?;
        let text = serde_json::to_string_pretty(self).expect("sample set serializes");
        writeln!(file, "{text}")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SamplingError> {
        let text = std::fs::read_to_string(path)?;
        let mut set: SampleSet =
            serde_json::from_str(&text).map_err(|e| SamplingError::BadFile(e.to_string()))?;
        set.strata = Vec::new();
        Ok(set)
    }

    /// Rebuild per-sample stratum counts from the corpus.
    pub fn recompute_strata(&mut self, corpus: &Corpus) {
        let by_id: HashMap<&str, &str> = corpus
            .records
            .iter()
            .map(|r| (r.id.as_str(), r.gold_major.name.as_str()))
            .collect();
        self.strata = self
            .samples
            .iter()
            .map(|sample| {
                let mut counts: BTreeMap<String, usize> = BTreeMap::new();
                for id in sample {
                    if let Some(name) = by_id.get(id.as_str()) {
                        *counts.entry((*name).to_string()).or_insert(0) += 1;
                    }
                }
                counts
            })
            .collect();
    }

    /// Count vectors over the union of classes seen in any sample.
    pub fn count_vectors(&self) -> (Vec<String>, Vec<Vec<u64>>) {
        let mut classes: Vec<String> = self
            .strata
            .iter()
            .flat_map(|m| m.keys().cloned())
            .collect();
        classes.sort();
        classes.dedup();
        let vectors = self
            .strata
            .iter()
            .map(|m| {
                classes
                    .iter()
                    .map(|c| *m.get(c).unwrap_or(&0) as u64)
                    .collect()
            })
            .collect();
        (classes, vectors)
    }
}

/// Remove records whose class (at `level`) has fewer than `min_count`
/// observations in the corpus. Returns the pruned corpus and the excluded
/// class names, ascending.
pub fn exclude_rare_classes(
    corpus: &Corpus,
    min_count: usize,
    level: Level,
) -> Result<(Corpus, Vec<String>), SamplingError> {
    let class_of = |rec: &crate::dataset::CaseRecord| -> Result<String, SamplingError> {
        match level {
            Level::Major => Ok(rec.gold_major.name.clone()),
            Level::Sub => rec
                .gold_sub
                .as_ref()
                .map(|s| s.name.clone())
                .ok_or(SamplingError::MissingSublabel),
        }
    };
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for rec in &corpus.records {
        *counts.entry(class_of(rec)?).or_insert(0) += 1;
    }
    let excluded: Vec<String> = counts
        .iter()
        .filter(|(_, &c)| c < min_count)
        .map(|(name, _)| name.clone())
        .collect();
    let records: Vec<_> = corpus
        .records
        .iter()
        .filter(|rec| {
            let name = class_of(rec).expect("checked above");
            !excluded.contains(&name)
        })
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(SamplingError::EmptyCorpusAfterExclusion);
    }
    Ok((
        Corpus {
            records,
            provenance: corpus.provenance.clone(),
        },
        excluded,
    ))
}

/// Largest-remainder apportionment of `n` seats over class counts.
///
/// All arithmetic is integral: floor((n * count) / total) seats up front,
/// leftovers by descending remainder `(n * count) % total`, ties by
/// ascending class name. The allocation always sums to exactly `n`.
pub fn largest_remainder(counts: &BTreeMap<String, usize>, n: usize) -> BTreeMap<String, usize> {
    let total: u128 = counts.values().map(|&c| c as u128).sum();
    assert!(total > 0, "cannot apportion over an empty class list");
    let mut alloc: BTreeMap<String, usize> = BTreeMap::new();
    let mut remainders: Vec<(u128, &String)> = Vec::new();
    let mut assigned: usize = 0;
    for (name, &count) in counts {
        let product = n as u128 * count as u128;
        let floor = (product / total) as usize;
        alloc.insert(name.clone(), floor);
        assigned += floor;
        remainders.push((product % total, name));
    }
    // descending remainder, ascending name
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    for (_, name) in remainders.into_iter().take(n - assigned) {
        *alloc.get_mut(name).expect("allocated above") += 1;
    }
    alloc
}

/// Draw one stratified sample of `n` ids using the given seed.
pub fn stratified_sample(
    corpus: &Corpus,
    n: usize,
    seed: u64,
) -> Result<Vec<String>, SamplingError> {
    if n > corpus.len() {
        return Err(SamplingError::SampleTooLarge {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut strata: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for rec in &corpus.records {
        strata
            .entry(rec.gold_major.name.clone())
            .or_default()
            .push(rec.id.as_str());
    }
    let counts: BTreeMap<String, usize> =
        strata.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let alloc = largest_remainder(&counts, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = Vec::with_capacity(n);
    for (name, ids) in &strata {
        let take = alloc[name];
        if take > ids.len() {
            return Err(SamplingError::StratumExhausted(name.clone()));
        }
        // partial Fisher-Yates: first `take` positions are the draw
        let mut pool: Vec<&str> = ids.clone();
        for i in 0..take {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        sample.extend(pool[..take].iter().map(|s| s.to_string()));
    }
    Ok(sample)
}

/// Draw N independent stratified samples from seeds `seed+1 ..= seed+N`.
pub fn draw_sample_set(
    corpus: &Corpus,
    n: usize,
    count: usize,
    seed: u64,
) -> Result<SampleSet, SamplingError> {
    let mut samples = Vec::with_capacity(count);
    for i in 1..=count {
        samples.push(stratified_sample(corpus, n, seed + i as u64)?);
    }
    let mut set = SampleSet {
        n,
        count,
        excluded: Vec::new(),
        samples,
        strata: Vec::new(),
    };
    set.recompute_strata(corpus);
    Ok(set)
}

/// Test the expected-frequency assumption on a (vectors x classes) table.
///
/// Tables with fewer than two classes are degenerate: they cannot feed a
/// chi-squared homogeneity test, so they cannot satisfy the assumption.
pub fn check_chi2_assumption(vectors: &[Vec<u64>]) -> Result<AssumptionCheck, SamplingError> {
    if vectors.len() < 2 {
        return Err(SamplingError::TooFewVectors);
    }
    let width = vectors[0].len();
    if vectors.iter().any(|v| v.len() != width) {
        return Err(SamplingError::VectorLengthMismatch);
    }
    if width < 2 {
        return Err(SamplingError::DegenerateTable);
    }
    let row_totals: Vec<u64> = vectors.iter().map(|v| v.iter().sum()).collect();
    let col_totals: Vec<u64> = (0..width).map(|j| vectors.iter().map(|v| v[j]).sum()).collect();
    if row_totals.iter().any(|&t| t == 0) || col_totals.iter().any(|&t| t == 0) {
        return Err(SamplingError::DegenerateTable);
    }
    let grand: u64 = row_totals.iter().sum();
    let mut ok = 0usize;
    let total_cells = vectors.len() * width;
    for &r in &row_totals {
        for &c in &col_totals {
            let expected = r as f64 * c as f64 / grand as f64;
            if expected >= EXPECTED_MIN {
                ok += 1;
            }
        }
    }
    Ok(AssumptionCheck::new(ok, total_cells))
}

/// Parameters for the nested design search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSearchParams {
    pub size_start: usize,
    pub size_step: usize,
    pub count_max: usize,
    pub seed: u64,
}

impl Default for DesignSearchParams {
    fn default() -> Self {
        DesignSearchParams {
            size_start: 500,
            size_step: 50,
            count_max: 30,
            seed: 0,
        }
    }
}

/// Result of a successful design search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSearchResult {
    pub n: usize,
    pub count: usize,
    /// The weakest pairwise check of the accepted design.
    pub worst_check: AssumptionCheck,
    #[serde(skip)]
    pub sample_set: SampleSet,
}

/// Search for a (sample size, sample count) design whose pairwise
/// expected-frequency checks all pass.
///
/// Outer loop: candidate sizes descending from `size_start` by
/// `size_step`; inner loop: sample counts ascending. A candidate needs at
/// least one pair (count >= 2) before it can be accepted. Candidate sizes
/// larger than the corpus are skipped.
pub fn search_design(
    corpus: &Corpus,
    params: &DesignSearchParams,
) -> Result<DesignSearchResult, SamplingError> {
    assert!(params.size_step >= 1, "size_step must be at least 1");
    let mut best_fraction: f64 = 0.0;
    let mut size = params.size_start;
    while size >= 1 {
        if size <= corpus.len() {
            for count in 2..=params.count_max {
                let set = draw_sample_set(corpus, size, count, params.seed)?;
                let (_, vectors) = set.count_vectors();
                let mut worst: Option<AssumptionCheck> = None;
                let mut all_pass = true;
                'pairs: for i in 0..vectors.len() {
                    for j in (i + 1)..vectors.len() {
                        let check = match check_chi2_assumption(&[
                            vectors[i].clone(),
                            vectors[j].clone(),
                        ]) {
                            Ok(check) => check,
                            // a degenerate pair just disqualifies this candidate
                            Err(SamplingError::DegenerateTable) => {
                                all_pass = false;
                                break 'pairs;
                            }
                            Err(other) => return Err(other),
                        };
                        if check.fraction_ok > best_fraction {
                            best_fraction = check.fraction_ok;
                        }
                        let weaker = worst
                            .as_ref()
                            .map_or(true, |w| check.fraction_ok < w.fraction_ok);
                        if weaker {
                            worst = Some(check.clone());
                        }
                        if !check.passed {
                            all_pass = false;
                            break 'pairs;
                        }
                    }
                }
                if all_pass {
                    return Ok(DesignSearchResult {
                        n: size,
                        count,
                        worst_check: worst.expect("count >= 2 yields at least one pair"),
                        sample_set: set,
                    });
                }
            }
        }
        if size <= params.size_step {
            break;
        }
        size -= params.size_step;
    }
    Err(SamplingError::NoDesignFound { best_fraction })
}
