//! Rendering of statistics into tables and plot artifacts.
//!
//! Rendering is pure and byte-deterministic: the same bundle always
//! produces the same files. Proportions, effect sizes, and chi-squared
//! statistics print with three decimals. SVG plots are built by hand so
//! the artifacts carry no external assets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{AgreementReport, UNPARSED_LABEL};
use crate::validity::{ChiSquareResult, ValiditySummary};

#[derive(Error, Debug)]
pub enum ReportError {
    #[error("bundle is missing data for {0}")]
    IncompleteBundle(String),
    #[error("heatmap needs a square matrix")]
    NonSquareMatrix,
    #[error("heatmap matrix must be symmetric")]
    AsymmetricMatrix,
    #[error("support and f1 maps must have identical keys")]
    KeyMismatch,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Output format for tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Markdown,
}

impl Format {
    pub const ALL: [Format; 3] = [Format::Csv, Format::Json, Format::Markdown];

    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Markdown => "md",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

/// One row of the headline pairwise table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub method_a: String,
    pub method_b: String,
    pub result: ChiSquareResult,
}

/// Disagreement bands used to group classwise effect sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisagreementBand {
    High,
    Moderate,
    Low,
    VeryLow,
}

impl DisagreementBand {
    pub fn from_v(v: f64) -> Self {
        if v >= 0.20 {
            DisagreementBand::High
        } else if v >= 0.10 {
            DisagreementBand::Moderate
        } else if v >= 0.05 {
            DisagreementBand::Low
        } else {
            DisagreementBand::VeryLow
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DisagreementBand::High => "High Disagreement (V >= 0.20)",
            DisagreementBand::Moderate => "Moderate Disagreement (0.10 <= V < 0.20)",
            DisagreementBand::Low => "Low Disagreement (0.05 <= V < 0.10)",
            DisagreementBand::VeryLow => "Very Low Disagreement (V < 0.05)",
        }
    }
}

/// One classwise disagreement row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClasswiseRow {
    pub class: String,
    pub result: ChiSquareResult,
    pub band: DisagreementBand,
}

/// Everything the report stage renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    /// (method label, pooled report) per intervention, in run order.
    pub performance: Vec<(String, AgreementReport)>,
    /// Which method the per-class table describes.
    pub per_class_method: String,
    pub within: Vec<ValiditySummary>,
    pub between: Vec<ValiditySummary>,
    pub pairwise: Vec<PairwiseRow>,
    pub classwise: Vec<ClasswiseRow>,
}

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

/// Rows of the per-class table: gold-supported classes of the chosen
/// method, sorted descending by F1 (ties by class name, ascending).
pub fn per_class_rows(report: &AgreementReport) -> Vec<(String, crate::metrics::PerClass)> {
    let mut rows: Vec<(String, crate::metrics::PerClass)> = report
        .per_class
        .iter()
        .filter(|(name, pc)| pc.support > 0 && name.as_str() != UNPARSED_LABEL)
        .map(|(name, pc)| (name.clone(), pc.clone()))
        .collect();
    rows.sort_by(|a, b| {
        b.1.f1
            .partial_cmp(&a.1.f1)
            .expect("f1 is finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    rows
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => {
                let mut out = String::new();
                out.push_str(&csv_row(&self.header));
                for row in &self.rows {
                    out.push_str(&csv_row(row));
                }
                out
            }
            Format::Markdown => {
                // pad cells so the table reads as aligned columns in plain text
                let widths: Vec<usize> = (0..self.header.len())
                    .map(|j| {
                        self.rows
                            .iter()
                            .map(|r| r[j].len())
                            .chain(std::iter::once(self.header[j].len()))
                            .max()
                            .unwrap_or(0)
                    })
                    .collect();
                let pad_row = |cells: &[String]| -> String {
                    let padded: Vec<String> = cells
                        .iter()
                        .zip(&widths)
                        .map(|(c, w)| format!("{c:<w$}"))
                        .collect();
                    format!("| {} |\n", padded.join(" | "))
                };
                let mut out = pad_row(&self.header);
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&format!("| {} |\n", rule.join(" | ")));
                for row in &self.rows {
                    out.push_str(&pad_row(row));
                }
                out
            }
            Format::Json => {
                let objects: Vec<BTreeMap<&str, &str>> = self
                    .rows
                    .iter()
                    .map(|row| {
                        self.header
                            .iter()
                            .map(|h| h.as_str())
                            .zip(row.iter().map(|v| v.as_str()))
                            .collect()
                    })
                    .collect();
                let mut text =
                    serde_json::to_string_pretty(&objects).expect("table serializes");
                text.push('\n');
                text
            }
        }
    }
}

fn csv_row(fields: &[String]) -> String {
    let quoted: Vec<String> = fields
        .iter()
        .map(|f| {
            if f.contains(',') || f.contains('"') || f.contains('\n') {
                format!("\"{}\"", f.replace('"', "\"\""))
            } else {
                f.clone()
            }
        })
        .collect();
    format!("{}\n", quoted.join(","))
}

fn performance_table(bundle: &ReportBundle) -> Result<Table, ReportError> {
    if bundle.performance.is_empty() {
        return Err(ReportError::IncompleteBundle("performance".to_string()));
    }
    let header = [
        "Method",
        "Accuracy",
        "Precision",
        "Recall",
        "F1 Macro",
        "F1 Weighted",
        "Kappa",
        "Alpha",
        "Spearman",
        "Items",
        "Unparsed",
    ]
    .map(String::from)
    .to_vec();
    let rows = bundle
        .performance
        .iter()
        .map(|(method, r)| {
            vec![
                method.clone(),
                f3(r.accuracy),
                f3(r.macro_precision),
                f3(r.macro_recall),
                f3(r.macro_f1),
                f3(r.weighted_f1),
                f3(r.kappa),
                f3(r.alpha),
                f3(r.spearman),
                r.n_items.to_string(),
                r.n_unparsed.to_string(),
            ]
        })
        .collect();
    Ok(Table { header, rows })
}

fn per_class_table(bundle: &ReportBundle) -> Result<Table, ReportError> {
    let report = bundle
        .performance
        .iter()
        .find(|(m, _)| m == &bundle.per_class_method)
        .map(|(_, r)| r)
        .ok_or_else(|| ReportError::IncompleteBundle("per_class".to_string()))?;
    let rows = per_class_rows(report);
    if rows.is_empty() {
        return Err(ReportError::IncompleteBundle("per_class".to_string()));
    }
    let header = ["Class", "Precision", "Recall", "F1-score", "Support"]
        .map(String::from)
        .to_vec();
    let rows = rows
        .into_iter()
        .map(|(name, pc)| {
            vec![
                name,
                f3(pc.precision),
                f3(pc.recall),
                f3(pc.f1),
                pc.support.to_string(),
            ]
        })
        .collect();
    Ok(Table { header, rows })
}

fn validity_table(summaries: &[ValiditySummary], which: &str) -> Result<Table, ReportError> {
    if summaries.is_empty() {
        return Err(ReportError::IncompleteBundle(which.to_string()));
    }
    let header = [
        "Method",
        "Mean Chi2",
        "Std Chi2",
        "Mean p value",
        "Std p value",
        "Significant p<0.05",
        "Significant Bonferroni",
        "Significant FDR",
        "Total Tests",
    ]
    .map(String::from)
    .to_vec();
    let rows = summaries
        .iter()
        .map(|s| {
            vec![
                s.scope.label(),
                f3(s.mean_chi2),
                f3(s.std_chi2),
                f3(s.mean_p),
                f3(s.std_p),
                s.n_sig_raw.to_string(),
                s.n_sig_bonferroni.to_string(),
                s.n_sig_fdr.to_string(),
                s.total_tests.to_string(),
            ]
        })
        .collect();
    Ok(Table { header, rows })
}

fn pairwise_table(bundle: &ReportBundle) -> Result<Table, ReportError> {
    if bundle.pairwise.is_empty() {
        return Err(ReportError::IncompleteBundle("pairwise".to_string()));
    }
    let header = ["Method 1", "Method 2", "Chi2", "p-value", "Cramers V", "n"]
        .map(String::from)
        .to_vec();
    let rows = bundle
        .pairwise
        .iter()
        .map(|row| {
            vec![
                row.method_a.clone(),
                row.method_b.clone(),
                f3(row.result.chi2),
                f3(row.result.p_value),
                f3(row.result.cramers_v),
                row.result.n.to_string(),
            ]
        })
        .collect();
    Ok(Table { header, rows })
}

fn classwise_table(bundle: &ReportBundle) -> Result<Table, ReportError> {
    if bundle.classwise.is_empty() {
        return Err(ReportError::IncompleteBundle("classwise".to_string()));
    }
    let header = ["Band", "Class", "Chi2", "p-value", "Cramers V"]
        .map(String::from)
        .to_vec();
    // group by band (high first), descending V inside a band
    let mut rows_src = bundle.classwise.clone();
    rows_src.sort_by(|a, b| {
        band_rank(a.band)
            .cmp(&band_rank(b.band))
            .then_with(|| {
                b.result
                    .cramers_v
                    .partial_cmp(&a.result.cramers_v)
                    .expect("v is finite")
            })
            .then_with(|| a.class.cmp(&b.class))
    });
    let rows = rows_src
        .into_iter()
        .map(|row| {
            vec![
                row.band.label().to_string(),
                row.class,
                f3(row.result.chi2),
                f3(row.result.p_value),
                f3(row.result.cramers_v),
            ]
        })
        .collect();
    Ok(Table { header, rows })
}

fn band_rank(band: DisagreementBand) -> u8 {
    match band {
        DisagreementBand::High => 0,
        DisagreementBand::Moderate => 1,
        DisagreementBand::Low => 2,
        DisagreementBand::VeryLow => 3,
    }
}

/// Render the bundle's tables into `out_dir/reports`, one file per table
/// and format. Returns the written paths in a fixed order.
pub fn render_tables(
    bundle: &ReportBundle,
    formats: &[Format],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let reports_dir = out_dir.join("reports");
    std::fs::create_dir_all(&reports_dir)?;
    let tables: Vec<(&str, Table)> = vec![
        ("performance", performance_table(bundle)?),
        ("per_class", per_class_table(bundle)?),
        ("validity_within", validity_table(&bundle.within, "validity_within")?),
        (
            "validity_between",
            validity_table(&bundle.between, "validity_between")?,
        ),
        ("pairwise", pairwise_table(bundle)?),
        ("classwise", classwise_table(bundle)?),
    ];
    let mut written = Vec::new();
    for (name, table) in &tables {
        for format in formats {
            let path = reports_dir.join(format!("{name}.{}", format.extension()));
            std::fs::write(&path, table.render(*format))?;
            written.push(path);
        }
    }
    Ok(written)
}

const HEATMAP_SIZE: f64 = 640.0;
const HEATMAP_MARGIN: f64 = 120.0;

fn heat_color(v: f64) -> String {
    // linear ramp from near-white to dark blue over [0, 1]
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    format!("rgb({},{},{})", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

/// Render a method-by-method Cramér's V heatmap as SVG text. The matrix
/// must be square and symmetric; the diagonal is left blank.
pub fn render_heatmap(labels: &[String], matrix: &[Vec<f64>]) -> Result<String, ReportError> {
    let k = labels.len();
    if matrix.len() != k || matrix.iter().any(|r| r.len() != k) {
        return Err(ReportError::NonSquareMatrix);
    }
    for i in 0..k {
        for j in 0..k {
            if i != j && (matrix[i][j] - matrix[j][i]).abs() > 1e-9 {
                return Err(ReportError::AsymmetricMatrix);
            }
        }
    }
    let cell = (HEATMAP_SIZE - HEATMAP_MARGIN) / k.max(1) as f64;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" \
         viewBox=\"0 0 {0} {0}\" font-family=\"monospace\" font-size=\"13\">\n",
        HEATMAP_SIZE
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (i, label) in labels.iter().enumerate() {
        let y = HEATMAP_MARGIN + (i as f64 + 0.5) * cell;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>\n",
            HEATMAP_MARGIN - 8.0,
            y,
            xml_escape(label)
        ));
        let x = HEATMAP_MARGIN + (i as f64 + 0.5) * cell;
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            HEATMAP_MARGIN - 10.0,
            xml_escape(label)
        ));
    }
    for i in 0..k {
        for j in 0..k {
            let x = HEATMAP_MARGIN + j as f64 * cell;
            let y = HEATMAP_MARGIN + i as f64 * cell;
            if i == j {
                svg.push_str(&format!(
                    "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" \
                     fill=\"white\" stroke=\"#ccc\"/>\n"
                ));
                continue;
            }
            let v = matrix[i][j];
            let text_fill = if v > 0.5 { "white" } else { "black" };
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" \
                 fill=\"{}\" stroke=\"#ccc\"/>\n",
                heat_color(v)
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" \
                 dominant-baseline=\"middle\" fill=\"{text_fill}\" class=\"v\">{}</text>\n",
                x + cell / 2.0,
                y + cell / 2.0,
                f3(v)
            ));
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

const DIST_WIDTH: f64 = 800.0;
const DIST_ROW: f64 = 24.0;
const DIST_LEFT: f64 = 200.0;

/// Render the class support distribution as horizontal bars annotated
/// with per-class F1 scores, descending by support.
pub fn render_class_distribution(
    supports: &BTreeMap<String, u64>,
    f1s: &BTreeMap<String, f64>,
) -> Result<String, ReportError> {
    if supports.len() != f1s.len() || supports.keys().any(|k| !f1s.contains_key(k)) {
        return Err(ReportError::KeyMismatch);
    }
    let mut order: Vec<(&String, &u64)> = supports.iter().collect();
    order.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let max_support = order.first().map(|(_, &s)| s).unwrap_or(0).max(1);
    let height = 40.0 + order.len() as f64 * DIST_ROW;
    let bar_span = DIST_WIDTH - DIST_LEFT - 120.0;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{DIST_WIDTH}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {DIST_WIDTH} {height:.0}\" font-family=\"monospace\" font-size=\"13\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (row, (name, &support)) in order.iter().enumerate() {
        let y = 24.0 + row as f64 * DIST_ROW;
        let width = bar_span * support as f64 / max_support as f64;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" dominant-baseline=\"middle\">{}</text>\n",
            DIST_LEFT - 8.0,
            y,
            xml_escape(name)
        ));
        svg.push_str(&format!(
            "<rect x=\"{DIST_LEFT}\" y=\"{:.1}\" width=\"{width:.2}\" height=\"{:.1}\" fill=\"#4477aa\"/>\n",
            y - DIST_ROW / 2.0 + 4.0,
            DIST_ROW - 8.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" dominant-baseline=\"middle\">{} (F1 {})</text>\n",
            DIST_LEFT + width + 6.0,
            y,
            support,
            f3(f1s[name.as_str()])
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Write the bundle's tables and both plots under `out_dir` using the
/// standard layout: `reports/*.{csv,json,md}` and `plots/*.svg`.
pub fn write_bundle(
    bundle: &ReportBundle,
    formats: &[Format],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let mut written = render_tables(bundle, formats, out_dir)?;
    let plots_dir = out_dir.join("plots");
    std::fs::create_dir_all(&plots_dir)?;

    // heatmap over the pairwise V values
    let mut methods: Vec<String> = Vec::new();
    for row in &bundle.pairwise {
        for m in [&row.method_a, &row.method_b] {
            if !methods.contains(m) {
                methods.push(m.clone());
            }
        }
    }
    let k = methods.len();
    let mut matrix = vec![vec![0.0; k]; k];
    for row in &bundle.pairwise {
        let i = methods.iter().position(|m| m == &row.method_a).expect("listed");
        let j = methods.iter().position(|m| m == &row.method_b).expect("listed");
        matrix[i][j] = row.result.cramers_v;
        matrix[j][i] = row.result.cramers_v;
    }
    let heatmap = render_heatmap(&methods, &matrix)?;
    let heatmap_path = plots_dir.join("v_heatmap.svg");
    std::fs::write(&heatmap_path, heatmap)?;
    written.push(heatmap_path);

    // class distribution for the per-class method
    let report = bundle
        .performance
        .iter()
        .find(|(m, _)| m == &bundle.per_class_method)
        .map(|(_, r)| r)
        .ok_or_else(|| ReportError::IncompleteBundle("class_distribution".to_string()))?;
    let mut supports = BTreeMap::new();
    let mut f1s = BTreeMap::new();
    for (name, pc) in report.per_class.iter() {
        if pc.support > 0 && name != UNPARSED_LABEL {
            supports.insert(name.clone(), pc.support);
            f1s.insert(name.clone(), pc.f1);
        }
    }
    let dist = render_class_distribution(&supports, &f1s)?;
    let dist_path = plots_dir.join("class_distribution.svg");
    std::fs::write(&dist_path, dist)?;
    written.push(dist_path);
    Ok(written)
}
