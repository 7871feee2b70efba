//! Corpus ingestion, preprocessing, and deterministic shuffling.
//!
//! Preprocessing applies the pruning rules in a fixed order (missing
//! fields, duplicate summaries, summaries under the two-sentence
//! threshold, and optionally missing sublabels); a record is charged to
//! the first rule it violates so the provenance counts always add back up
//! to the ingested row count.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{LabelRef, LabelScheme, Level};

#[derive(Error, Debug)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {0:?} not found in the input header")]
    MissingColumn(String),
    #[error("row {row}: label cell {value:?} is not an integer code")]
    InvalidLabelCell { row: usize, value: String },
    #[error("row {row}: label code {code} does not exist in the scheme")]
    UnknownLabelCode { row: usize, code: i64 },
    #[error("row {row}: sublabel {sub} does not belong to major {major}")]
    MismatchedSublabel { row: usize, sub: i64, major: i64 },
    #[error("row {row}: duplicate record id {id:?}")]
    DuplicateId { row: usize, id: String },
    #[error("corpus is empty after pruning")]
    EmptyCorpusAfterPruning,
    #[error("corpus line {line}: {message}")]
    BadJsonLine { line: usize, message: String },
}

/// One labeled case summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    pub summary: String,
    pub gold_major: LabelRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sub: Option<LabelRef>,
}

/// Per-rule counts of rows dropped between raw input and the final corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Data rows seen in the raw input.
    pub rows_in: usize,
    /// Rows dropped for an empty id, summary, or major-label cell.
    pub missing_field: usize,
    /// Rows dropped as byte-identical duplicate summaries (first kept).
    pub duplicate_summary: usize,
    /// Rows dropped for having fewer than two sentences.
    pub below_sentence_threshold: usize,
    /// Rows dropped for a missing sublabel (sublabel mode only).
    pub missing_sublabel: usize,
}

impl Provenance {
    pub fn dropped_total(&self) -> usize {
        self.missing_field
            + self.duplicate_summary
            + self.below_sentence_threshold
            + self.missing_sublabel
    }
}

/// An ordered collection of case records plus drop bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub records: Vec<CaseRecord>,
    pub provenance: Provenance,
}

impl Corpus {
    pub fn from_records(records: Vec<CaseRecord>) -> Self {
        let provenance = Provenance {
            rows_in: records.len(),
            ..Provenance::default()
        };
        Corpus { records, provenance }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record_by_id(&self, id: &str) -> Option<&CaseRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Write the corpus as JSON Lines, one record per line.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut file = std::fs::File::create(path)?;
        for rec in &self.records {
            let line = serde_json::to_string(rec).expect("record serializes");
            writeln!(file, "{line}")?;
        }
        Ok(())
    }

    /// Read a corpus previously written with [`Corpus::write_jsonl`].
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let file = std::fs::File::open(path)?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CaseRecord =
                serde_json::from_str(&line).map_err(|e| DatasetError::BadJsonLine {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            records.push(rec);
        }
        Ok(Corpus::from_records(records))
    }
}

/// Mapping from corpus fields to CSV column names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub id: String,
    pub summary: String,
    pub major: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "id".to_string(),
            summary: "summary".to_string(),
            major: "major_code".to_string(),
            sub: Some("sub_code".to_string()),
        }
    }
}

/// Ingest a labeled CSV into a raw corpus, resolving numeric label codes to
/// canonical names via the scheme.
///
/// Rows with an empty id or major cell are counted as missing-field drops
/// here (a record cannot be built without them); everything else is left
/// for [`preprocess`]. A non-empty label cell that does not resolve is an
/// error, not a drop.
pub fn ingest(
    path: impl AsRef<Path>,
    scheme: &LabelScheme,
    columns: &ColumnMap,
) -> Result<Corpus, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let id_idx = col(&columns.id)?;
    let summary_idx = col(&columns.summary)?;
    let major_idx = col(&columns.major)?;
    let sub_idx = match &columns.sub {
        Some(name) => Some(col(name)?),
        None => None,
    };

    let mut records = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut provenance = Provenance::default();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = i + 1;
        provenance.rows_in += 1;
        let id = row.get(id_idx).unwrap_or("").trim().to_string();
        let summary = row.get(summary_idx).unwrap_or("").to_string();
        let major_cell = row.get(major_idx).unwrap_or("").trim();
        if id.is_empty() || major_cell.is_empty() {
            provenance.missing_field += 1;
            continue;
        }
        if !seen_ids.insert(id.clone()) {
            return Err(DatasetError::DuplicateId { row: row_no, id });
        }
        let major_code = parse_code(row_no, major_cell)?;
        let gold_major = scheme
            .resolve_code(Level::Major, major_code)
            .ok_or(DatasetError::UnknownLabelCode {
                row: row_no,
                code: major_code,
            })?;
        let gold_sub = match sub_idx {
            Some(idx) => {
                let cell = row.get(idx).unwrap_or("").trim();
                if cell.is_empty() {
                    None
                } else {
                    let sub_code = parse_code(row_no, cell)?;
                    let sub = scheme.resolve_code(Level::Sub, sub_code).ok_or(
                        DatasetError::UnknownLabelCode {
                            row: row_no,
                            code: sub_code,
                        },
                    )?;
                    let parent = scheme.sub_parent(sub_code).expect("sub resolved");
                    if parent != gold_major.code {
                        return Err(DatasetError::MismatchedSublabel {
                            row: row_no,
                            sub: sub_code,
                            major: gold_major.code,
                        });
                    }
                    Some(sub)
                }
            }
            None => None,
        };
        records.push(CaseRecord {
            id,
            summary,
            gold_major,
            gold_sub,
        });
    }
    Ok(Corpus { records, provenance })
}

fn parse_code(row: usize, cell: &str) -> Result<i64, DatasetError> {
    cell.parse::<i64>().map_err(|_| DatasetError::InvalidLabelCell {
        row,
        value: cell.to_string(),
    })
}

/// Apply the pruning rules to a raw corpus.
///
/// `drop_missing_sub` enables the sublabel-evaluation rule that removes
/// rows without a gold sublabel. Provenance accumulates on top of whatever
/// the input corpus already recorded, so running preprocess twice changes
/// nothing (it is idempotent, records and provenance both).
pub fn preprocess(corpus: &Corpus, drop_missing_sub: bool) -> Result<Corpus, DatasetError> {
    let mut provenance = corpus.provenance.clone();
    let mut seen_summaries: HashSet<&str> = HashSet::new();
    let mut records = Vec::with_capacity(corpus.records.len());
    for rec in &corpus.records {
        if rec.id.trim().is_empty() || rec.summary.trim().is_empty() {
            provenance.missing_field += 1;
            continue;
        }
        if !seen_summaries.insert(rec.summary.as_str()) {
            provenance.duplicate_summary += 1;
            continue;
        }
        if sentence_count(&rec.summary) < 2 {
            provenance.below_sentence_threshold += 1;
            continue;
        }
        if drop_missing_sub && rec.gold_sub.is_none() {
            provenance.missing_sublabel += 1;
            continue;
        }
        records.push(rec.clone());
    }
    if records.is_empty() {
        return Err(DatasetError::EmptyCorpusAfterPruning);
    }
    Ok(Corpus { records, provenance })
}

/// Count sentences: maximal segments ending in '.', '!' or '?' followed by
/// whitespace and an uppercase letter, or by end of text. A trailing
/// unterminated segment of at least three whitespace-separated tokens
/// counts as one sentence.
///
/// The rule is deliberately lexicon-free; abbreviations like "Mr." split.
pub fn sentence_count(text: &str) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let mut count = 0usize;
    let mut segment_start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            // extend over a run of terminators ("..." ends at the last dot)
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j], '.' | '!' | '?') {
                j += 1;
            }
            // look ahead: whitespace then uppercase, or end of text
            let mut k = j;
            while k < chars.len() && chars[k].is_whitespace() {
                k += 1;
            }
            let at_end = k == chars.len();
            let ws_then_upper = k > j && chars[k].is_uppercase();
            if at_end || ws_then_upper {
                count += 1;
                segment_start = k;
                i = k;
                continue;
            }
            i = j;
            continue;
        }
        i += 1;
    }
    let trailing: String = chars[segment_start.min(chars.len())..].iter().collect();
    if trailing.split_whitespace().count() >= 3 {
        count += 1;
    }
    count
}

/// Reorder the corpus by the md5 digest of `salt + id` (lowercase hex),
/// ascending; digest ties break by id. The result depends only on the ids
/// present, not on the input order.
pub fn md5_shuffle(corpus: &Corpus, salt: &str) -> Corpus {
    let mut keyed: Vec<(String, &CaseRecord)> = corpus
        .records
        .iter()
        .map(|rec| {
            let mut hasher = Md5::new();
            hasher.update(salt.as_bytes());
            hasher.update(rec.id.as_bytes());
            let digest = hasher.finalize();
            (hex_lower(&digest), rec)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    Corpus {
        records: keyed.into_iter().map(|(_, r)| r.clone()).collect(),
        provenance: corpus.provenance.clone(),
    }
}

fn hex_lower(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
