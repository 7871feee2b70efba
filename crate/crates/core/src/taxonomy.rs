//! Hierarchical label scheme and label normalization.
//!
//! The scheme is a two-level taxonomy (major classes and subclasses) with
//! an alias table for alternate spellings. All matching between raw model
//! output and canonical names goes through [`normalize_label`], which is
//! deliberately conservative: anything that does not resolve cleanly comes
//! back as [`Normalized::Unparsed`] so misparses stay visible downstream.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum edit distance for fuzzy resolution of a raw label.
pub const FUZZY_DISTANCE_MAX: usize = 2;

const DEFAULT_SCHEME_JSON: &str = include_str!("../assets/cap_major_scheme.json");

#[derive(Error, Debug)]
pub enum TaxonomyError {
    #[error("scheme file not found: {0}")]
    MissingFile(String),
    #[error("failed to parse scheme at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("duplicate code {0} in scheme")]
    DuplicateCode(i64),
    #[error("duplicate name {0:?} in scheme (names are case-folded)")]
    DuplicateName(String),
    #[error("subclass code {0} references a major code that does not exist")]
    OrphanSub(i64),
    #[error("alias {alias:?} targets {target:?}, which is not a canonical name")]
    BadAliasTarget { alias: String, target: String },
    #[error("scheme has no major classes")]
    EmptyScheme,
}

/// Level of a label in the two-level taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Major,
    Sub,
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Level::Major => write!(f, "major"),
            Level::Sub => write!(f, "sub"),
        }
    }
}

/// A resolved reference to one class in the active scheme.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelRef {
    pub level: Level,
    pub code: i64,
    pub name: String,
}

/// Outcome of normalizing a raw label string.
///
/// `Unparsed` is a value, not an error: downstream scoring treats it as its
/// own category rather than silently dropping the item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Normalized {
    Resolved(LabelRef),
    Unparsed { nearest: Option<String> },
}

impl Normalized {
    pub fn resolved(&self) -> Option<&LabelRef> {
        match self {
            Normalized::Resolved(r) => Some(r),
            Normalized::Unparsed { .. } => None,
        }
    }

    pub fn is_unparsed(&self) -> bool {
        matches!(self, Normalized::Unparsed { .. })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MajorDef {
    code: i64,
    name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SubDef {
    code: i64,
    name: String,
    parent: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemeFile {
    majors: Vec<MajorDef>,
    #[serde(default)]
    subs: Vec<SubDef>,
    #[serde(default)]
    aliases: BTreeMap<String, String>,
}

/// The two-level label scheme. Immutable after load; shareable across threads.
#[derive(Debug, Clone)]
pub struct LabelScheme {
    majors: Vec<MajorDef>,
    subs: Vec<SubDef>,
    aliases: BTreeMap<String, String>,
    major_by_folded: HashMap<String, usize>,
    major_by_code: HashMap<i64, usize>,
    sub_by_folded: HashMap<String, usize>,
    sub_by_code: HashMap<i64, usize>,
    // folded alias -> canonical (unfolded) target name
    alias_by_folded: HashMap<String, String>,
}

/// Case-fold a raw label: trim, then Unicode default lowercasing.
pub fn fold(raw: &str) -> String {
    raw.trim().to_lowercase()
}

impl LabelScheme {
    /// Load a scheme from a JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|_| TaxonomyError::MissingFile(path.display().to_string()))?;
        Self::from_json(&text)
    }

    /// Parse a scheme from JSON text.
    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let file: SchemeFile = serde_json::from_str(text).map_err(|e| TaxonomyError::ParseError {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::from_parts(file.majors, file.subs, file.aliases)
    }

    /// The bundled scheme transcribing the 21 CAP major policy topics.
    pub fn default_cap() -> Self {
        Self::from_json(DEFAULT_SCHEME_JSON).expect("bundled scheme must be valid")
    }

    /// JSON text of the bundled default scheme.
    pub fn default_cap_json() -> &'static str {
        DEFAULT_SCHEME_JSON
    }

    fn from_parts(
        majors: Vec<MajorDef>,
        subs: Vec<SubDef>,
        aliases: BTreeMap<String, String>,
    ) -> Result<Self, TaxonomyError> {
        if majors.is_empty() {
            return Err(TaxonomyError::EmptyScheme);
        }
        let mut major_by_folded = HashMap::new();
        let mut major_by_code = HashMap::new();
        for (i, m) in majors.iter().enumerate() {
            if major_by_code.insert(m.code, i).is_some() {
                return Err(TaxonomyError::DuplicateCode(m.code));
            }
            if major_by_folded.insert(fold(&m.name), i).is_some() {
                return Err(TaxonomyError::DuplicateName(m.name.clone()));
            }
        }
        let mut sub_by_folded = HashMap::new();
        let mut sub_by_code = HashMap::new();
        for (i, s) in subs.iter().enumerate() {
            if sub_by_code.insert(s.code, i).is_some() {
                return Err(TaxonomyError::DuplicateCode(s.code));
            }
            if sub_by_folded.insert(fold(&s.name), i).is_some() {
                return Err(TaxonomyError::DuplicateName(s.name.clone()));
            }
            if !major_by_code.contains_key(&s.parent) {
                return Err(TaxonomyError::OrphanSub(s.code));
            }
        }
        let mut alias_by_folded = HashMap::new();
        for (alias, target) in &aliases {
            let target_folded = fold(target);
            if !major_by_folded.contains_key(&target_folded)
                && !sub_by_folded.contains_key(&target_folded)
            {
                return Err(TaxonomyError::BadAliasTarget {
                    alias: alias.clone(),
                    target: target.clone(),
                });
            }
            alias_by_folded.insert(fold(alias), target.clone());
        }
        Ok(Self {
            majors,
            subs,
            aliases,
            major_by_folded,
            major_by_code,
            sub_by_folded,
            sub_by_code,
            alias_by_folded,
        })
    }

    pub fn major_count(&self) -> usize {
        self.majors.len()
    }

    /// Canonical major names in scheme order.
    pub fn major_names(&self) -> Vec<&str> {
        self.majors.iter().map(|m| m.name.as_str()).collect()
    }

    /// Alias table as loaded (alias -> canonical target).
    pub fn aliases(&self) -> &BTreeMap<String, String> {
        &self.aliases
    }

    /// Resolve a numeric code at the given level.
    pub fn resolve_code(&self, level: Level, code: i64) -> Option<LabelRef> {
        match level {
            Level::Major => self.major_by_code.get(&code).map(|&i| LabelRef {
                level,
                code,
                name: self.majors[i].name.clone(),
            }),
            Level::Sub => self.sub_by_code.get(&code).map(|&i| LabelRef {
                level,
                code,
                name: self.subs[i].name.clone(),
            }),
        }
    }

    /// Resolve an exact canonical name (after case folding) at the given level.
    pub fn resolve_name(&self, level: Level, name: &str) -> Option<LabelRef> {
        let folded = fold(name);
        match level {
            Level::Major => self.major_by_folded.get(&folded).map(|&i| LabelRef {
                level,
                code: self.majors[i].code,
                name: self.majors[i].name.clone(),
            }),
            Level::Sub => self.sub_by_folded.get(&folded).map(|&i| LabelRef {
                level,
                code: self.subs[i].code,
                name: self.subs[i].name.clone(),
            }),
        }
    }

    /// Parent major code of a subclass.
    pub fn sub_parent(&self, sub_code: i64) -> Option<i64> {
        self.sub_by_code.get(&sub_code).map(|&i| self.subs[i].parent)
    }

    /// Stable fingerprint of the class set, used to detect mixed-scheme inputs.
    pub fn fingerprint(&self) -> String {
        let mut names: Vec<String> = self.majors.iter().map(|m| fold(&m.name)).collect();
        names.extend(self.subs.iter().map(|s| fold(&s.name)));
        names.sort();
        names.join("|")
    }

    /// All candidate strings at a level for fuzzy matching and mention
    /// scanning: canonical names plus alias keys whose target resolves at
    /// that level. Each candidate carries its resolved canonical name.
    fn candidates(&self, level: Level) -> Vec<(String, String)> {
        let mut out = Vec::new();
        match level {
            Level::Major => {
                for m in &self.majors {
                    out.push((fold(&m.name), m.name.clone()));
                }
            }
            Level::Sub => {
                for s in &self.subs {
                    out.push((fold(&s.name), s.name.clone()));
                }
            }
        }
        for (alias_folded, target) in &self.alias_by_folded {
            if let Some(r) = self.resolve_name(level, target) {
                out.push((alias_folded.clone(), r.name));
            }
        }
        out.sort();
        out
    }

    /// Distinct canonical classes mentioned in `text` (word-boundary matches
    /// against canonical names and aliases), with the byte offset of the last
    /// mention of each.
    pub fn mentions(&self, level: Level, text: &str) -> Vec<(usize, String)> {
        let haystack = text.to_lowercase();
        let mut last_by_class: BTreeMap<String, usize> = BTreeMap::new();
        for (needle, canonical) in self.candidates(level) {
            if needle.is_empty() {
                continue;
            }
            for (pos, _) in haystack.match_indices(&needle) {
                if !word_bounded(&haystack, pos, needle.len()) {
                    continue;
                }
                let entry = last_by_class.entry(canonical.clone()).or_insert(pos);
                if pos > *entry {
                    *entry = pos;
                }
            }
        }
        let mut out: Vec<(usize, String)> =
            last_by_class.into_iter().map(|(c, p)| (p, c)).collect();
        out.sort();
        out
    }
}

fn word_bounded(haystack: &str, pos: usize, len: usize) -> bool {
    let before_ok = haystack[..pos]
        .chars()
        .next_back()
        .map_or(true, |c| !c.is_alphanumeric());
    let after_ok = haystack[pos + len..]
        .chars()
        .next()
        .map_or(true, |c| !c.is_alphanumeric());
    before_ok && after_ok
}

/// Normalize a raw label string against the scheme at the given level.
///
/// Resolution order: exact case-folded match, then alias match, then a
/// fuzzy match at edit distance <= 2 provided the minimum-distance
/// candidates all resolve to a single class (ties between distinct classes
/// stay unparsed). Failing all of those the result is `Unparsed` carrying
/// the globally nearest candidate's canonical name.
pub fn normalize_label(raw: &str, level: Level, scheme: &LabelScheme) -> Normalized {
    let folded = fold(raw);
    if folded.is_empty() {
        return Normalized::Unparsed { nearest: None };
    }
    if let Some(r) = scheme.resolve_name(level, &folded) {
        return Normalized::Resolved(r);
    }
    if let Some(target) = scheme.alias_by_folded.get(&folded) {
        if let Some(r) = scheme.resolve_name(level, target) {
            return Normalized::Resolved(r);
        }
    }
    let candidates = scheme.candidates(level);
    if candidates.is_empty() {
        return Normalized::Unparsed { nearest: None };
    }
    let mut best: Vec<&(String, String)> = Vec::new();
    let mut best_dist = usize::MAX;
    for cand in &candidates {
        let d = edit_distance(&folded, &cand.0);
        if d < best_dist {
            best_dist = d;
            best = vec![cand];
        } else if d == best_dist {
            best.push(cand);
        }
    }
    let mut best_classes: Vec<&str> = best.iter().map(|(_, c)| c.as_str()).collect();
    best_classes.sort();
    best_classes.dedup();
    if best_dist <= FUZZY_DISTANCE_MAX && best_classes.len() == 1 {
        if let Some(r) = scheme.resolve_name(level, best_classes[0]) {
            return Normalized::Resolved(r);
        }
    }
    Normalized::Unparsed {
        nearest: Some(best_classes[0].to_string()),
    }
}

/// Levenshtein distance over Unicode scalar values (two-row DP).
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Load a scheme from a JSON file (free-function form).
pub fn load_scheme(path: impl AsRef<Path>) -> Result<LabelScheme, TaxonomyError> {
    LabelScheme::load(path)
}
