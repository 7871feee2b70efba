//! Construct-validity machinery: chi-squared homogeneity tests, effect
//! sizes, multiple-comparison corrections, and the within/between-method
//! and classwise test suites.
//!
//! Columns that are zero in every row are dropped before testing (their
//! expected counts would be 0/0) and the degrees of freedom shrink
//! accordingly. Corrections are applied per suite with m equal to that
//! suite's test count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::chi2_survival;
use crate::taxonomy::LabelScheme;

/// Raw significance level shared by all suites.
pub const SIG_LEVEL: f64 = 0.05;

#[derive(Error, Debug)]
pub enum ValidityError {
    #[error("table is degenerate (needs >= 2 rows and >= 2 nonzero columns, no zero rows)")]
    DegenerateTable,
    #[error("suites must have matching run counts: {left} vs {right}")]
    IndexMismatch { left: usize, right: usize },
    #[error("need at least two runs, got {0}")]
    TooFewRuns(usize),
    #[error("class {0:?} is not in the scheme")]
    UnknownClass(String),
    #[error("classwise test requires equal pooled item counts per method")]
    UnequalPooledCounts,
    #[error("p-value {0} outside [0, 1]")]
    InvalidPValue(f64),
}

/// One chi-squared homogeneity test result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub chi2: f64,
    pub dof: u64,
    pub p_value: f64,
    pub n: u64,
    pub cramers_v: f64,
}

/// Cramér's V effect size: sqrt(chi2 / (n * (min(r, c) - 1))).
pub fn cramers_v(chi2: f64, n: u64, rows: usize, cols: usize) -> f64 {
    assert!(n > 0, "effect size needs a positive total count");
    let min_dim = rows.min(cols);
    assert!(min_dim >= 2, "effect size needs at least a 2x2 table");
    (chi2 / (n as f64 * (min_dim - 1) as f64)).sqrt()
}

/// Chi-squared test of homogeneity on an r x c count table.
///
/// Expected counts are row_total * col_total / n; the p-value is the
/// upper tail of the chi-squared distribution at (r-1)(c-1) degrees of
/// freedom.
pub fn chi2_homogeneity(table: &[Vec<u64>]) -> Result<ChiSquareResult, ValidityError> {
    let rows = table.len();
    if rows < 2 {
        return Err(ValidityError::DegenerateTable);
    }
    let width = table[0].len();
    if width == 0 || table.iter().any(|r| r.len() != width) {
        return Err(ValidityError::DegenerateTable);
    }
    // drop columns with no observations in any row
    let keep: Vec<usize> = (0..width)
        .filter(|&j| table.iter().any(|r| r[j] > 0))
        .collect();
    let cols = keep.len();
    if cols < 2 {
        return Err(ValidityError::DegenerateTable);
    }
    let row_totals: Vec<u64> = table
        .iter()
        .map(|r| keep.iter().map(|&j| r[j]).sum())
        .collect();
    if row_totals.iter().any(|&t| t == 0) {
        return Err(ValidityError::DegenerateTable);
    }
    let col_totals: Vec<u64> = keep
        .iter()
        .map(|&j| table.iter().map(|r| r[j]).sum())
        .collect();
    let n: u64 = row_totals.iter().sum();
    let mut chi2 = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (jj, &j) in keep.iter().enumerate() {
            let expected = row_totals[i] as f64 * col_totals[jj] as f64 / n as f64;
            let observed = row[j] as f64;
            chi2 += (observed - expected) * (observed - expected) / expected;
        }
    }
    let dof = ((rows - 1) * (cols - 1)) as u64;
    Ok(ChiSquareResult {
        chi2,
        dof,
        p_value: chi2_survival(chi2, dof),
        n,
        cramers_v: cramers_v(chi2, n, rows, cols),
    })
}

/// Bonferroni correction: adjusted p = min(1, m * p); reject when the
/// adjusted value is at or below `level`.
pub fn bonferroni(p_values: &[f64], level: f64) -> (Vec<f64>, Vec<bool>) {
    let m = p_values.len() as f64;
    let adjusted: Vec<f64> = p_values.iter().map(|&p| (m * p).min(1.0)).collect();
    let reject = adjusted.iter().map(|&p| p <= level).collect();
    (adjusted, reject)
}

/// Benjamini-Hochberg step-up FDR control at level `q`.
///
/// Rejects all sorted p-values up to the largest i with p_(i) <= i*q/m;
/// adjusted values are the running minimum over suffixes of m*p_(i)/i,
/// capped at 1. Flags and adjusted values come back in input order.
pub fn benjamini_hochberg(p_values: &[f64], q: f64) -> (Vec<f64>, Vec<bool>) {
    let m = p_values.len();
    if m == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        p_values[a]
            .partial_cmp(&p_values[b])
            .expect("p-values are finite")
            .then(a.cmp(&b))
    });
    // adjusted p by suffix minimum
    let mut adjusted_sorted = vec![0.0; m];
    let mut running = 1.0f64;
    for i in (0..m).rev() {
        let raw = m as f64 * p_values[order[i]] / (i + 1) as f64;
        running = running.min(raw.min(1.0));
        adjusted_sorted[i] = running;
    }
    // step-up rejection threshold
    let mut cutoff = 0usize; // number of sorted entries rejected
    for i in (0..m).rev() {
        if p_values[order[i]] <= (i + 1) as f64 * q / m as f64 {
            cutoff = i + 1;
            break;
        }
    }
    let mut adjusted = vec![0.0; m];
    let mut reject = vec![false; m];
    for (i, &idx) in order.iter().enumerate() {
        adjusted[idx] = adjusted_sorted[i];
        reject[idx] = i < cutoff;
    }
    (adjusted, reject)
}

/// What a validity summary covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "lowercase")]
pub enum Scope {
    Within { method: String },
    Between { method_a: String, method_b: String },
}

impl Scope {
    pub fn label(&self) -> String {
        match self {
            Scope::Within { method } => method.clone(),
            Scope::Between { method_a, method_b } => format!("{method_a} vs {method_b}"),
        }
    }
}

/// Aggregated outcome of a suite of chi-squared tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValiditySummary {
    pub scope: Scope,
    pub mean_chi2: f64,
    pub std_chi2: f64,
    pub mean_p: f64,
    pub std_p: f64,
    pub n_sig_raw: usize,
    pub n_sig_bonferroni: usize,
    pub n_sig_fdr: usize,
    pub total_tests: usize,
    /// Standard deviations use the sample (n-1) denominator.
    pub std_kind: String,
    pub results: Vec<ChiSquareResult>,
}

fn summarize(scope: Scope, results: Vec<ChiSquareResult>) -> ValiditySummary {
    let chi2s: Vec<f64> = results.iter().map(|r| r.chi2).collect();
    let ps: Vec<f64> = results.iter().map(|r| r.p_value).collect();
    let (_, bonf) = bonferroni(&ps, SIG_LEVEL);
    let (_, fdr) = benjamini_hochberg(&ps, SIG_LEVEL);
    ValiditySummary {
        scope,
        mean_chi2: mean(&chi2s),
        std_chi2: sample_std(&chi2s),
        mean_p: mean(&ps),
        std_p: sample_std(&ps),
        n_sig_raw: ps.iter().filter(|&&p| p < SIG_LEVEL).count(),
        n_sig_bonferroni: bonf.iter().filter(|&&r| r).count(),
        n_sig_fdr: fdr.iter().filter(|&&r| r).count(),
        total_tests: results.len(),
        std_kind: "sample".to_string(),
        results,
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Count predicted labels by class.
pub fn label_counts(labels: &[String]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for l in labels {
        *counts.entry(l.clone()).or_insert(0) += 1;
    }
    counts
}

fn two_row_table(a: &BTreeMap<String, u64>, b: &BTreeMap<String, u64>) -> Vec<Vec<u64>> {
    let mut classes: Vec<&String> = a.keys().chain(b.keys()).collect();
    classes.sort();
    classes.dedup();
    let row = |m: &BTreeMap<String, u64>| -> Vec<u64> {
        classes.iter().map(|c| *m.get(*c).unwrap_or(&0)).collect()
    };
    vec![row(a), row(b)]
}

/// Convergent-validity suite: every unordered pair of same-method runs is
/// tested for homogeneity of its predicted-label distribution. Total
/// tests = C(N, 2); corrections use that m.
pub fn within_method_suite(
    method: &str,
    runs: &[Vec<String>],
) -> Result<ValiditySummary, ValidityError> {
    if runs.len() < 2 {
        return Err(ValidityError::TooFewRuns(runs.len()));
    }
    let counts: Vec<BTreeMap<String, u64>> = runs.iter().map(|r| label_counts(r)).collect();
    let mut results = Vec::with_capacity(runs.len() * (runs.len() - 1) / 2);
    for i in 0..counts.len() {
        for j in (i + 1)..counts.len() {
            results.push(chi2_homogeneity(&two_row_table(&counts[i], &counts[j]))?);
        }
    }
    Ok(summarize(
        Scope::Within {
            method: method.to_string(),
        },
        results,
    ))
}

/// Discriminant-validity suite: runs are paired by sample index across the
/// two methods; each pair yields one 2 x k test. Total tests = N.
pub fn between_method_suite(
    method_a: &str,
    runs_a: &[Vec<String>],
    method_b: &str,
    runs_b: &[Vec<String>],
) -> Result<ValiditySummary, ValidityError> {
    if runs_a.len() != runs_b.len() {
        return Err(ValidityError::IndexMismatch {
            left: runs_a.len(),
            right: runs_b.len(),
        });
    }
    if runs_a.is_empty() {
        return Err(ValidityError::TooFewRuns(0));
    }
    let mut results = Vec::with_capacity(runs_a.len());
    for (a, b) in runs_a.iter().zip(runs_b) {
        results.push(chi2_homogeneity(&two_row_table(
            &label_counts(a),
            &label_counts(b),
        ))?);
    }
    Ok(summarize(
        Scope::Between {
            method_a: method_a.to_string(),
            method_b: method_b.to_string(),
        },
        results,
    ))
}

/// Headline pairwise test: one 2 x k homogeneity test on the pooled
/// predicted-label counts of two methods.
pub fn pooled_pair_test(
    preds_a: &[String],
    preds_b: &[String],
) -> Result<ChiSquareResult, ValidityError> {
    chi2_homogeneity(&two_row_table(
        &label_counts(preds_a),
        &label_counts(preds_b),
    ))
}

/// Classwise disagreement: an (methods x 2) table of "predicted this
/// class" vs "predicted anything else" over each method's pooled
/// predictions.
pub fn classwise_disagreement(
    method_preds: &[(String, Vec<String>)],
    class_name: &str,
    scheme: &LabelScheme,
) -> Result<ChiSquareResult, ValidityError> {
    if scheme
        .resolve_name(crate::taxonomy::Level::Major, class_name)
        .is_none()
    {
        return Err(ValidityError::UnknownClass(class_name.to_string()));
    }
    if method_preds.len() < 2 {
        return Err(ValidityError::TooFewRuns(method_preds.len()));
    }
    let first_len = method_preds[0].1.len();
    if method_preds.iter().any(|(_, p)| p.len() != first_len) {
        return Err(ValidityError::UnequalPooledCounts);
    }
    let table: Vec<Vec<u64>> = method_preds
        .iter()
        .map(|(_, preds)| {
            let hits = preds.iter().filter(|p| p.as_str() == class_name).count() as u64;
            vec![hits, preds.len() as u64 - hits]
        })
        .collect();
    chi2_homogeneity(&table)
}
