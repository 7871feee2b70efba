//! Pipeline stages. Each stage validates its inputs, writes its artifacts
//! under the output directory, and returns the written paths so the
//! caller can record them in the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use dqc_core::coder::{
    resume_state, CoderBackend, CoderError, CodingRun, HttpChatBackend, NoisyReplayBackend,
    ReplayBackend, RunStore, TokenBucket,
};
use dqc_core::dataset::{ingest, md5_shuffle, preprocess, Corpus};
use dqc_core::interventions::{
    build_plan, ClassDefinitions, InterventionKind, PromptPlan, PromptTemplates,
};
use dqc_core::metrics::{
    aggregate_over_samples, agreement_report, average_over_samples, predicted_name,
    AgreementReport,
};
use dqc_core::report::{ClasswiseRow, DisagreementBand, PairwiseRow, ReportBundle};
use dqc_core::sampling::{
    draw_sample_set, exclude_rare_classes, search_design, DesignSearchParams, SampleSet,
};
use dqc_core::taxonomy::{LabelScheme, Level};
use dqc_core::validity::{
    between_method_suite, classwise_disagreement, pooled_pair_test, within_method_suite,
    ValidityError, ValiditySummary,
};

use crate::config::{Aggregation, BackendChoice, RunConfig};

/// splitmix64 step, used to derive independent seeds per (kind, sample).
fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn kind_stream(kind: InterventionKind) -> u64 {
    match kind {
        InterventionKind::ZeroShot => 1,
        InterventionKind::FewShot => 2,
        InterventionKind::Definitions => 3,
        InterventionKind::StepByStep => 4,
    }
}

pub fn load_scheme(config: &RunConfig) -> Result<LabelScheme> {
    match &config.scheme {
        Some(path) => LabelScheme::load(path)
            .with_context(|| format!("loading scheme {}", path.display())),
        None => Ok(LabelScheme::default_cap()),
    }
}

fn load_definitions(config: &RunConfig, scheme: &LabelScheme) -> Result<ClassDefinitions> {
    match &config.defs {
        Some(path) => ClassDefinitions::load(path, scheme)
            .with_context(|| format!("loading definitions {}", path.display())),
        None => ClassDefinitions::default_cap(scheme).context("bundled definitions"),
    }
}

fn load_templates(config: &RunConfig) -> Result<PromptTemplates> {
    match &config.templates {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading templates {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing templates {}", path.display()))
        }
        None => Ok(PromptTemplates::default()),
    }
}

fn corpus_artifact(config: &RunConfig) -> PathBuf {
    config.out.join("corpus.jsonl")
}

fn load_corpus_artifact(config: &RunConfig) -> Result<Corpus> {
    let path = corpus_artifact(config);
    if !path.exists() {
        bail!(
            "{} not found; run the ingest stage first",
            path.display()
        );
    }
    Ok(Corpus::read_jsonl(&path)?)
}

/// Ingest: CSV -> preprocessed, shuffled corpus.jsonl (+ provenance.json).
pub fn stage_ingest(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let scheme = load_scheme(config)?;
    let input = config
        .corpus
        .as_ref()
        .ok_or_else(|| anyhow!("ingest needs --corpus <csv>"))?;
    let raw = ingest(input, &scheme, &config.columns)
        .with_context(|| format!("ingesting {}", input.display()))?;
    let pre = preprocess(&raw, config.sub_mode)?;
    let shuffled = md5_shuffle(&pre, &config.salt);
    std::fs::create_dir_all(&config.out)?;
    let corpus_path = corpus_artifact(config);
    shuffled.write_jsonl(&corpus_path)?;
    let provenance_path = config.out.join("provenance.json");
    std::fs::write(
        &provenance_path,
        serde_json::to_string_pretty(&shuffled.provenance)?,
    )?;
    eprintln!(
        "ingest: {} rows in, {} kept ({} dropped)",
        shuffled.provenance.rows_in,
        shuffled.len(),
        shuffled.provenance.dropped_total()
    );
    Ok(vec![corpus_path, provenance_path])
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainingPoolFile {
    pool: Vec<String>,
}

fn sample_set_path(config: &RunConfig) -> PathBuf {
    config.out.join("sample_set.json")
}

fn training_pool_path(config: &RunConfig) -> PathBuf {
    config.out.join("training_pool.json")
}

/// Sample: rare-class exclusion, training-pool reservation, then either a
/// fixed (n, N) draw or the descending design search.
pub fn stage_sample(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let corpus = load_corpus_artifact(config)?;
    let level = if config.sub_mode { Level::Sub } else { Level::Major };
    let (corpus, excluded) = exclude_rare_classes(&corpus, config.min_count, level)?;
    if !excluded.is_empty() {
        eprintln!("sample: excluded rare classes: {}", excluded.join(", "));
    }
    if corpus.len() <= config.training_pool_size {
        bail!(
            "corpus of {} leaves nothing to sample after reserving {} training records",
            corpus.len(),
            config.training_pool_size
        );
    }
    let pool: Vec<String> = corpus.records[..config.training_pool_size]
        .iter()
        .map(|r| r.id.clone())
        .collect();
    let sampling_corpus = Corpus::from_records(
        corpus.records[config.training_pool_size..].to_vec(),
    );
    let mut set: SampleSet = if config.search {
        let params = DesignSearchParams {
            size_start: config.size_start,
            size_step: config.size_step,
            count_max: config.count_max,
            seed: config.seed(),
        };
        let found = search_design(&sampling_corpus, &params)?;
        eprintln!(
            "sample: search settled on n={} N={} (worst pairwise fraction {:.3})",
            found.n, found.count, found.worst_check.fraction_ok
        );
        found.sample_set
    } else {
        draw_sample_set(&sampling_corpus, config.n, config.count, config.seed())?
    };
    set.excluded = excluded;
    let set_path = sample_set_path(config);
    set.save(&set_path)?;
    let pool_path = training_pool_path(config);
    std::fs::write(
        &pool_path,
        serde_json::to_string_pretty(&TrainingPoolFile { pool })?,
    )?;
    eprintln!("sample: {} samples of {}", set.count, set.n);
    Ok(vec![set_path, pool_path])
}

fn run_store_path(out: &Path, kind: InterventionKind, index: usize) -> PathBuf {
    out.join("runs").join(format!("{}-{index:03}.jsonl", kind.slug()))
}

fn build_requests(
    config: &RunConfig,
    scheme: &LabelScheme,
    corpus: &Corpus,
    set: &SampleSet,
    pool: &[String],
) -> Result<Vec<(PromptPlan, usize)>> {
    let templates = load_templates(config)?;
    let defs = if config.kinds.contains(&InterventionKind::Definitions) {
        Some(load_definitions(config, scheme)?)
    } else {
        None
    };
    let mut requests = Vec::new();
    for &kind in &config.kinds {
        for (i, sample) in set.samples.iter().enumerate() {
            let plan_seed = derive_seed(config.seed(), kind_stream(kind) * 1000 + i as u64);
            let plan = build_plan(
                kind,
                scheme,
                sample,
                corpus,
                defs.as_ref(),
                pool,
                &templates,
                config.max_items,
                plan_seed,
            )?;
            requests.push((plan, i));
        }
    }
    Ok(requests)
}

/// Code: execute every (kind, sample) plan against the configured
/// backend, with resumable per-run event logs.
pub fn stage_code(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let scheme = load_scheme(config)?;
    let corpus = load_corpus_artifact(config)?;
    let set = SampleSet::load(sample_set_path(config))
        .context("loading sample_set.json; run the sample stage first")?;
    let pool: TrainingPoolFile = serde_json::from_str(
        &std::fs::read_to_string(training_pool_path(config))
            .context("loading training_pool.json; run the sample stage first")?,
    )?;
    let requests = build_requests(config, &scheme, &corpus, &set, &pool.pool)?;

    // fail fast on misconfiguration before any plan executes
    let limiter = if config.backend == BackendChoice::Http {
        HttpChatBackend::new(config.http.clone())?;
        if config.rate_limit_per_sec > 0.0 {
            Some(Arc::new(TokenBucket::new(
                config.rate_limit_per_sec.max(1.0),
                config.rate_limit_per_sec,
            )))
        } else {
            None
        }
    } else {
        None
    };

    let backend_choice = config.backend;
    let epsilon = config.epsilon;
    let base_seed = config.seed();
    let http_config = config.http.clone();
    let corpus_ref = &corpus;
    let scheme_ref = &scheme;
    let limiter_ref = &limiter;
    let make_backend = move |plan: &PromptPlan,
                             _idx: usize|
          -> Result<Box<dyn CoderBackend + Send>, CoderError> {
        match backend_choice {
            BackendChoice::Replay => {
                Ok(Box::new(ReplayBackend::from_corpus(corpus_ref)))
            }
            BackendChoice::Noisy => Ok(Box::new(NoisyReplayBackend::uniform(
                corpus_ref,
                scheme_ref,
                epsilon,
                derive_seed(base_seed, 9000 + kind_stream(plan.kind)),
            ))),
            BackendChoice::Http => {
                let backend = HttpChatBackend::new(http_config.clone())?;
                Ok(match limiter_ref {
                    Some(bucket) => Box::new(backend.with_limiter(bucket.clone())),
                    None => Box::new(backend),
                })
            }
        }
    };
    let out = config.out.clone();
    let runs = dqc_core::coder::run_all(
        &requests,
        &scheme,
        config.concurrency,
        &make_backend,
        &move |plan, idx| Some(run_store_path(&out, plan.kind, idx)),
    )?;
    let mut outputs: Vec<PathBuf> = Vec::new();
    for (plan, idx) in &requests {
        outputs.push(run_store_path(&config.out, plan.kind, *idx));
    }
    eprintln!(
        "code: {} runs across {} interventions",
        runs.len(),
        config.kinds.len()
    );
    Ok(outputs)
}

/// Load a completed run back from its event log.
fn load_run(path: &Path, kind: InterventionKind, index: usize) -> Result<CodingRun> {
    let store = RunStore::new(path);
    let events = store
        .load_events()
        .with_context(|| format!("loading {}", path.display()))?;
    let state = resume_state(&events);
    if !state.done {
        bail!("{} is incomplete; rerun the code stage", path.display());
    }
    Ok(CodingRun {
        kind,
        sample_index: index,
        predictions: state.predictions,
        transcript: state.transcript,
        digest: state.digest,
    })
}

fn load_runs(config: &RunConfig, kind: InterventionKind, count: usize) -> Result<Vec<CodingRun>> {
    (0..count)
        .map(|i| load_run(&run_store_path(&config.out, kind, i), kind, i))
        .collect()
}

/// (gold, predicted) name pairs for one run, in item-id order.
fn run_pairs(run: &CodingRun, corpus: &Corpus) -> Result<Vec<(String, String)>> {
    let gold_by_id: BTreeMap<&str, &str> = corpus
        .records
        .iter()
        .map(|r| (r.id.as_str(), r.gold_major.name.as_str()))
        .collect();
    run.predictions
        .iter()
        .map(|(id, pred)| {
            let gold = gold_by_id
                .get(id.as_str())
                .ok_or_else(|| anyhow!("run references unknown record {id}"))?;
            Ok(((*gold).to_string(), predicted_name(&pred.label).to_string()))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MethodMetricsFile {
    pub method: String,
    pub kind: InterventionKind,
    pub aggregation: String,
    pub pooled: AgreementReport,
    pub samples: Vec<AgreementReport>,
}

fn metrics_path(config: &RunConfig, kind: InterventionKind) -> PathBuf {
    config.out.join("metrics").join(format!("{}.json", kind.slug()))
}

/// Metrics: per-sample agreement reports plus the method-level aggregate.
pub fn stage_metrics(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let scheme = load_scheme(config)?;
    let corpus = load_corpus_artifact(config)?;
    let set = SampleSet::load(sample_set_path(config))?;
    std::fs::create_dir_all(config.out.join("metrics"))?;
    let mut outputs = Vec::new();
    for &kind in &config.kinds {
        let runs = load_runs(config, kind, set.count)?;
        let mut sample_reports = Vec::with_capacity(runs.len());
        for run in &runs {
            let pairs = run_pairs(run, &corpus)?;
            sample_reports.push(agreement_report(&pairs, &scheme, Level::Major)?);
        }
        let pooled = match config.aggregation {
            Aggregation::Pool => aggregate_over_samples(&sample_reports, &scheme, Level::Major)?,
            Aggregation::Average => average_over_samples(&sample_reports, &scheme)?,
        };
        let file = MethodMetricsFile {
            method: kind.label().to_string(),
            kind,
            aggregation: match config.aggregation {
                Aggregation::Pool => "pool".to_string(),
                Aggregation::Average => "average".to_string(),
            },
            pooled,
            samples: sample_reports,
        };
        let path = metrics_path(config, kind);
        std::fs::write(&path, serde_json::to_string_pretty(&file)?)?;
        outputs.push(path);
    }
    eprintln!("metrics: wrote {} method files", outputs.len());
    Ok(outputs)
}

fn predicted_labels(run: &CodingRun) -> Vec<String> {
    run.predictions
        .values()
        .map(|p| predicted_name(&p.label).to_string())
        .collect()
}

fn validity_dir(config: &RunConfig) -> PathBuf {
    config.out.join("validity")
}

/// Validity: within-method and paired between-method suites, the pooled
/// pairwise table, and classwise disagreement over all methods.
pub fn stage_validity(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let scheme = load_scheme(config)?;
    let set = SampleSet::load(sample_set_path(config))?;
    let dir = validity_dir(config);
    std::fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();

    let mut preds_by_kind: BTreeMap<InterventionKind, Vec<Vec<String>>> = BTreeMap::new();
    for &kind in &config.kinds {
        let runs = load_runs(config, kind, set.count)?;
        preds_by_kind.insert(kind, runs.iter().map(predicted_labels).collect());
    }

    for &kind in &config.kinds {
        let summary = within_method_suite(kind.label(), &preds_by_kind[&kind])?;
        let path = dir.join(format!("within_{}.json", kind.slug()));
        std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
        outputs.push(path);
    }

    let mut between: Vec<ValiditySummary> = Vec::new();
    let mut pairwise: Vec<PairwiseRow> = Vec::new();
    for i in 0..config.kinds.len() {
        for j in (i + 1)..config.kinds.len() {
            let (a, b) = (config.kinds[i], config.kinds[j]);
            let summary =
                between_method_suite(a.label(), &preds_by_kind[&a], b.label(), &preds_by_kind[&b])?;
            let path = dir.join(format!("between_{}_vs_{}.json", a.slug(), b.slug()));
            std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
            outputs.push(path);
            between.push(summary);
            let pooled_a: Vec<String> =
                preds_by_kind[&a].iter().flatten().cloned().collect();
            let pooled_b: Vec<String> =
                preds_by_kind[&b].iter().flatten().cloned().collect();
            pairwise.push(PairwiseRow {
                method_a: a.label().to_string(),
                method_b: b.label().to_string(),
                result: pooled_pair_test(&pooled_a, &pooled_b)?,
            });
        }
    }
    let pairwise_path = dir.join("pairwise.json");
    std::fs::write(&pairwise_path, serde_json::to_string_pretty(&pairwise)?)?;
    outputs.push(pairwise_path);

    // classwise disagreement needs every method pooled to equal counts
    let method_preds: Vec<(String, Vec<String>)> = config
        .kinds
        .iter()
        .map(|k| {
            (
                k.label().to_string(),
                preds_by_kind[k].iter().flatten().cloned().collect(),
            )
        })
        .collect();
    let mut classwise: Vec<ClasswiseRow> = Vec::new();
    if method_preds.len() >= 2 {
        for name in scheme.major_names() {
            match classwise_disagreement(&method_preds, name, &scheme) {
                Ok(result) => classwise.push(ClasswiseRow {
                    class: name.to_string(),
                    band: DisagreementBand::from_v(result.cramers_v),
                    result,
                }),
                // a class no method ever predicted has nothing to test
                Err(ValidityError::DegenerateTable) => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }
    let classwise_path = dir.join("classwise.json");
    std::fs::write(&classwise_path, serde_json::to_string_pretty(&classwise)?)?;
    outputs.push(classwise_path);

    eprintln!(
        "validity: {} within suites, {} between suites, {} classwise rows",
        config.kinds.len(),
        between.len(),
        classwise.len()
    );
    Ok(outputs)
}

/// Report: assemble the bundle from persisted statistics and render it.
pub fn stage_report(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = validity_dir(config);
    let mut performance = Vec::new();
    for &kind in &config.kinds {
        let text = std::fs::read_to_string(metrics_path(config, kind))
            .context("metrics files missing; run the metrics stage first")?;
        let file: MethodMetricsFile = serde_json::from_str(&text)?;
        performance.push((file.method, file.pooled));
    }
    let per_class_method = performance
        .iter()
        .max_by(|a, b| {
            a.1.accuracy
                .partial_cmp(&b.1.accuracy)
                .expect("accuracy is finite")
        })
        .map(|(m, _)| m.clone())
        .ok_or_else(|| anyhow!("no methods to report"))?;

    let mut within = Vec::new();
    for &kind in &config.kinds {
        let text =
            std::fs::read_to_string(dir.join(format!("within_{}.json", kind.slug())))
                .context("validity files missing; run the validity stage first")?;
        within.push(serde_json::from_str(&text)?);
    }
    let mut between = Vec::new();
    for i in 0..config.kinds.len() {
        for j in (i + 1)..config.kinds.len() {
            let (a, b) = (config.kinds[i], config.kinds[j]);
            let text = std::fs::read_to_string(
                dir.join(format!("between_{}_vs_{}.json", a.slug(), b.slug())),
            )?;
            between.push(serde_json::from_str(&text)?);
        }
    }
    let pairwise: Vec<PairwiseRow> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("pairwise.json"))?)?;
    let classwise: Vec<ClasswiseRow> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("classwise.json"))?)?;

    let bundle = ReportBundle {
        performance,
        per_class_method,
        within,
        between,
        pairwise,
        classwise,
    };
    let written = dqc_core::report::write_bundle(&bundle, &config.formats, &config.out)?;
    eprintln!("report: wrote {} artifacts", written.len());
    Ok(written)
}

/// Generate a synthetic CAP-shaped corpus CSV.
pub fn stage_gen_corpus(config: &RunConfig, rows: usize, path: &Path) -> Result<Vec<PathBuf>> {
    let scheme = load_scheme(config)?;
    let corpus = dqc_core::synthetic::generate_corpus(&scheme, rows, config.seed());
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, dqc_core::synthetic::corpus_to_csv(&corpus))?;
    eprintln!("gen-corpus: wrote {} rows to {}", rows, path.display());
    Ok(vec![path.to_path_buf()])
}
