//! Classification performance and inter-rater agreement statistics.
//!
//! All statistics are computed from item-level (gold, predicted) label
//! pairs. Unparsed predictions are kept as their own category, so they
//! count against accuracy and appear in contingency tables instead of
//! silently inflating agreement; they are excluded from macro averaging
//! through the gold-support rule (gold labels are never unparsed).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{LabelScheme, Level, Normalized};

/// Category name used for predictions that did not resolve to a class.
pub const UNPARSED_LABEL: &str = "Unparsed";

#[derive(Error, Debug)]
pub enum MetricsError {
    #[error("label sequences differ in length: {gold} vs {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("need at least {needed} items, got {got}")]
    TooFewUnits { needed: usize, got: usize },
    #[error("label {0:?} does not resolve to a scheme code")]
    UnresolvableLabel(String),
    #[error("reports were computed against different schemes")]
    SchemeMismatch,
    #[error("no reports to aggregate")]
    EmptyInput,
}

/// Name a prediction contributes to scoring: the class name, or the
/// reserved unparsed category.
pub fn predicted_name(normalized: &Normalized) -> &str {
    match normalized {
        Normalized::Resolved(r) => &r.name,
        Normalized::Unparsed { .. } => UNPARSED_LABEL,
    }
}

/// Confusion matrix over the union of observed classes; rows are gold,
/// columns are predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Tally a confusion matrix from parallel gold/predicted label sequences.
pub fn confusion(gold: &[String], pred: &[String]) -> Result<ConfusionMatrix, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(MetricsError::TooFewUnits { needed: 1, got: 0 });
    }
    let mut classes: Vec<String> = gold.iter().chain(pred.iter()).cloned().collect();
    classes.sort();
    classes.dedup();
    let index: BTreeMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (g, p) in gold.iter().zip(pred) {
        counts[index[g.as_str()]][index[p.as_str()]] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// Per-class precision, recall, F1, and gold support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Accuracy plus per-class and averaged classification metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSummary {
    pub accuracy: f64,
    pub per_class: BTreeMap<String, PerClass>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

/// Compute classification metrics from a confusion matrix.
///
/// Zero denominators yield 0. Macro averages run over classes with gold
/// support greater than zero; the weighted F1 is support-weighted.
pub fn classification_metrics(cm: &ConfusionMatrix) -> ClassificationSummary {
    let k = cm.classes.len();
    let total = cm.total();
    let mut diag = 0u64;
    let mut per_class = BTreeMap::new();
    let mut macro_p = 0.0;
    let mut macro_r = 0.0;
    let mut macro_f = 0.0;
    let mut weighted_f = 0.0;
    let mut supported = 0u64;
    let mut supported_classes = 0usize;
    for i in 0..k {
        let tp = cm.counts[i][i];
        diag += tp;
        let row: u64 = cm.counts[i].iter().sum(); // gold support
        let col: u64 = (0..k).map(|r| cm.counts[r][i]).sum();
        let precision = ratio(tp, col);
        let recall = ratio(tp, row);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        if row > 0 {
            macro_p += precision;
            macro_r += recall;
            macro_f += f1;
            weighted_f += row as f64 * f1;
            supported += row;
            supported_classes += 1;
        }
        per_class.insert(
            cm.classes[i].clone(),
            PerClass {
                precision,
                recall,
                f1,
                support: row,
            },
        );
    }
    let sc = supported_classes.max(1) as f64;
    ClassificationSummary {
        accuracy: ratio(diag, total),
        per_class,
        macro_precision: macro_p / sc,
        macro_recall: macro_r / sc,
        macro_f1: macro_f / sc,
        weighted_f1: if supported > 0 {
            weighted_f / supported as f64
        } else {
            0.0
        },
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Cohen's kappa for two label sequences.
///
/// Expected agreement comes from the product of the marginal
/// distributions. When expected agreement is exactly 1 (both sequences
/// constant on the same category), kappa is 1 if observed agreement is 1
/// and 0 otherwise.
pub fn cohen_kappa(gold: &[String], pred: &[String]) -> Result<f64, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let n = gold.len();
    if n == 0 {
        return Err(MetricsError::TooFewUnits { needed: 1, got: 0 });
    }
    let mut gold_marginal: BTreeMap<&str, u64> = BTreeMap::new();
    let mut pred_marginal: BTreeMap<&str, u64> = BTreeMap::new();
    let mut agree = 0u64;
    for (g, p) in gold.iter().zip(pred) {
        *gold_marginal.entry(g).or_insert(0) += 1;
        *pred_marginal.entry(p).or_insert(0) += 1;
        if g == p {
            agree += 1;
        }
    }
    // exact check for degenerate marginals
    let degenerate = gold_marginal.len() == 1
        && pred_marginal.len() == 1
        && gold_marginal.keys().eq(pred_marginal.keys());
    if degenerate {
        return Ok(if agree as usize == n { 1.0 } else { 0.0 });
    }
    let nf = n as f64;
    let p_o = agree as f64 / nf;
    let mut p_e = 0.0;
    for (cat, gc) in &gold_marginal {
        if let Some(pc) = pred_marginal.get(cat) {
            p_e += (*gc as f64 / nf) * (*pc as f64 / nf);
        }
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Krippendorff's alpha for nominal data, two coders, no missing values.
///
/// Coincidence-matrix form: each unit contributes its two ordered value
/// pairs with weight 1. With a single category overall the expected
/// disagreement is zero and alpha is 1.
pub fn krippendorff_alpha_nominal(
    coder_a: &[String],
    coder_b: &[String],
) -> Result<f64, MetricsError> {
    if coder_a.len() != coder_b.len() {
        return Err(MetricsError::LengthMismatch {
            gold: coder_a.len(),
            pred: coder_b.len(),
        });
    }
    let units = coder_a.len();
    if units < 2 {
        return Err(MetricsError::TooFewUnits {
            needed: 2,
            got: units,
        });
    }
    let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
    let mut disagree_pairs = 0u64;
    for (a, b) in coder_a.iter().zip(coder_b) {
        *totals.entry(a).or_insert(0) += 1;
        *totals.entry(b).or_insert(0) += 1;
        if a != b {
            disagree_pairs += 2; // both ordered pairs are off-diagonal
        }
    }
    let n = (2 * units) as f64;
    if totals.len() == 1 {
        return Ok(1.0);
    }
    let d_o = disagree_pairs as f64 / n;
    let mut same_cat = 0.0;
    for &c in totals.values() {
        same_cat += c as f64 * (c as f64 - 1.0);
    }
    let d_e = (n * (n - 1.0) - same_cat) / (n * (n - 1.0));
    Ok(1.0 - d_o / d_e)
}

/// Spearman rank correlation of scheme codes with mid-ranks for ties.
///
/// Labels are mapped to their numeric scheme codes at the given level and
/// ranked; the result is the Pearson correlation of the rank vectors, or 0
/// when either rank vector is constant.
pub fn spearman_rho(
    gold: &[String],
    pred: &[String],
    scheme: &LabelScheme,
    level: Level,
) -> Result<f64, MetricsError> {
    if gold.len() != pred.len() {
        return Err(MetricsError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    if gold.len() < 2 {
        return Err(MetricsError::TooFewUnits {
            needed: 2,
            got: gold.len(),
        });
    }
    let to_codes = |labels: &[String]| -> Result<Vec<f64>, MetricsError> {
        labels
            .iter()
            .map(|name| {
                scheme
                    .resolve_name(level, name)
                    .map(|r| r.code as f64)
                    .ok_or_else(|| MetricsError::UnresolvableLabel(name.clone()))
            })
            .collect()
    };
    let g = to_codes(gold)?;
    let p = to_codes(pred)?;
    Ok(pearson(&mid_ranks(&g), &mid_ranks(&p)))
}

/// Mid-ranks (average ranks for ties), 1-based.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite codes"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // 1-based average of positions i..=j
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Full agreement report for one or more pooled samples.
///
/// Carries the item-level pairs so reports can be re-pooled exactly.
/// Spearman is computed over the pairs whose prediction resolved; the
/// unparsed category has no scheme code, so those items are skipped for
/// that one statistic (and counted in `n_unparsed`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_items: usize,
    pub n_unparsed: usize,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub spearman: f64,
    pub per_class: BTreeMap<String, PerClass>,
    pub pairs: Vec<(String, String)>,
    pub scheme_fingerprint: String,
}

/// Build an agreement report from item-level (gold, predicted) pairs.
pub fn agreement_report(
    pairs: &[(String, String)],
    scheme: &LabelScheme,
    level: Level,
) -> Result<AgreementReport, MetricsError> {
    let gold: Vec<String> = pairs.iter().map(|(g, _)| g.clone()).collect();
    let pred: Vec<String> = pairs.iter().map(|(_, p)| p.clone()).collect();
    let cm = confusion(&gold, &pred)?;
    let cls = classification_metrics(&cm);
    let kappa = cohen_kappa(&gold, &pred)?;
    let alpha = krippendorff_alpha_nominal(&gold, &pred)?;
    let n_unparsed = pred.iter().filter(|p| p.as_str() == UNPARSED_LABEL).count();
    let resolvable: Vec<(String, String)> = pairs
        .iter()
        .filter(|(_, p)| p != UNPARSED_LABEL)
        .cloned()
        .collect();
    let spearman = if resolvable.len() >= 2 {
        let g: Vec<String> = resolvable.iter().map(|(g, _)| g.clone()).collect();
        let p: Vec<String> = resolvable.iter().map(|(_, p)| p.clone()).collect();
        spearman_rho(&g, &p, scheme, level)?
    } else {
        0.0
    };
    Ok(AgreementReport {
        n_items: pairs.len(),
        n_unparsed,
        accuracy: cls.accuracy,
        macro_precision: cls.macro_precision,
        macro_recall: cls.macro_recall,
        macro_f1: cls.macro_f1,
        weighted_f1: cls.weighted_f1,
        kappa,
        alpha,
        spearman,
        per_class: cls.per_class,
        pairs: pairs.to_vec(),
        scheme_fingerprint: scheme.fingerprint(),
    })
}

/// Pool reports by concatenating their item-level pairs and recomputing
/// every statistic on the pooled data.
pub fn aggregate_over_samples(
    reports: &[AgreementReport],
    scheme: &LabelScheme,
    level: Level,
) -> Result<AgreementReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let fp = scheme.fingerprint();
    if reports.iter().any(|r| r.scheme_fingerprint != fp) {
        return Err(MetricsError::SchemeMismatch);
    }
    let pooled: Vec<(String, String)> = reports
        .iter()
        .flat_map(|r| r.pairs.iter().cloned())
        .collect();
    agreement_report(&pooled, scheme, level)
}

/// Average per-sample statistics instead of pooling items (the
/// flag-selected alternative aggregation). Headline statistics are
/// unweighted means across samples; per-class rows average where present
/// with supports summed.
pub fn average_over_samples(
    reports: &[AgreementReport],
    scheme: &LabelScheme,
) -> Result<AgreementReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let fp = scheme.fingerprint();
    if reports.iter().any(|r| r.scheme_fingerprint != fp) {
        return Err(MetricsError::SchemeMismatch);
    }
    let nf = reports.len() as f64;
    let mean = |f: fn(&AgreementReport) -> f64| reports.iter().map(f).sum::<f64>() / nf;
    let mut per_class: BTreeMap<String, PerClass> = BTreeMap::new();
    let mut appearances: BTreeMap<String, f64> = BTreeMap::new();
    for r in reports {
        for (name, pc) in &r.per_class {
            let entry = per_class.entry(name.clone()).or_insert(PerClass {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
                support: 0,
            });
            entry.precision += pc.precision;
            entry.recall += pc.recall;
            entry.f1 += pc.f1;
            entry.support += pc.support;
            *appearances.entry(name.clone()).or_insert(0.0) += 1.0;
        }
    }
    for (name, pc) in per_class.iter_mut() {
        let k = appearances[name];
        pc.precision /= k;
        pc.recall /= k;
        pc.f1 /= k;
    }
    Ok(AgreementReport {
        n_items: reports.iter().map(|r| r.n_items).sum(),
        n_unparsed: reports.iter().map(|r| r.n_unparsed).sum(),
        accuracy: mean(|r| r.accuracy),
        macro_precision: mean(|r| r.macro_precision),
        macro_recall: mean(|r| r.macro_recall),
        macro_f1: mean(|r| r.macro_f1),
        weighted_f1: mean(|r| r.weighted_f1),
        kappa: mean(|r| r.kappa),
        alpha: mean(|r| r.alpha),
        spearman: mean(|r| r.spearman),
        per_class,
        pairs: reports.iter().flat_map(|r| r.pairs.iter().cloned()).collect(),
        scheme_fingerprint: fp,
    })
}
