//! Run configuration: JSON file with command-line overrides (flags win).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dqc_core::coder::HttpChatConfig;
use dqc_core::dataset::ColumnMap;
use dqc_core::interventions::InterventionKind;
use dqc_core::report::Format;

/// Which coder backend executes the plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Replay,
    Noisy,
    Http,
}

impl std::str::FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "replay" => Ok(BackendChoice::Replay),
            "noisy" | "noisy-replay" => Ok(BackendChoice::Noisy),
            "http" => Ok(BackendChoice::Http),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

/// How per-sample metrics aggregate into a method-level report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Pool,
    Average,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "pool" | "pooled" => Ok(Aggregation::Pool),
            "average" | "mean" => Ok(Aggregation::Average),
            other => Err(format!("unknown aggregation {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Raw labeled CSV for the ingest stage.
    pub corpus: Option<PathBuf>,
    /// Label scheme JSON; the bundled CAP majors scheme when absent.
    pub scheme: Option<PathBuf>,
    /// Class definitions JSON; the bundled placeholder when absent.
    pub defs: Option<PathBuf>,
    /// Prompt template overrides (JSON, partial).
    pub templates: Option<PathBuf>,
    pub kinds: Vec<InterventionKind>,
    pub n: usize,
    #[serde(rename = "N")]
    pub count: usize,
    /// Mandatory: the study is a reproducibility exercise, so there is no
    /// wall-clock fallback.
    pub seed: Option<u64>,
    pub salt: String,
    pub backend: BackendChoice,
    pub epsilon: f64,
    pub max_items: usize,
    pub out: PathBuf,
    pub columns: ColumnMap,
    pub sub_mode: bool,
    pub min_count: usize,
    pub training_pool_size: usize,
    pub search: bool,
    pub size_start: usize,
    pub size_step: usize,
    pub count_max: usize,
    pub concurrency: usize,
    /// Requests per second for the HTTP backend; 0 disables the limiter.
    pub rate_limit_per_sec: f64,
    pub aggregation: Aggregation,
    pub formats: Vec<Format>,
    pub http: HttpChatConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            scheme: None,
            defs: None,
            templates: None,
            kinds: InterventionKind::ALL.to_vec(),
            n: 50,
            count: 30,
            seed: None,
            salt: String::new(),
            backend: BackendChoice::Replay,
            epsilon: 0.0,
            max_items: dqc_core::interventions::DEFAULT_MAX_ITEMS,
            out: PathBuf::from("out"),
            columns: ColumnMap::default(),
            sub_mode: false,
            min_count: 5,
            training_pool_size: 120,
            search: false,
            size_start: 500,
            size_step: 50,
            count_max: 30,
            concurrency: 1,
            rate_limit_per_sec: 0.0,
            aggregation: Aggregation::Pool,
            formats: Format::ALL.to_vec(),
            http: HttpChatConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Validate what every stage needs: a seed and existing input files.
    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            bail!("a seed is required (set --seed or \"seed\" in the config)");
        }
        if self.n < 1 || self.count < 1 {
            bail!("n and N must both be at least 1");
        }
        for (name, path) in [
            ("corpus", &self.corpus),
            ("scheme", &self.scheme),
            ("defs", &self.defs),
            ("templates", &self.templates),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    bail!("{name} file {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }
}
