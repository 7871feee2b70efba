//! Core library of the deductive qualitative coding harness.
//!
//! The pipeline runs corpus ingestion and preprocessing, stratified
//! repeated-measures sampling, four prompting interventions executed
//! against pluggable coder backends, and a statistical suite covering
//! classification performance, inter-rater reliability, and chi-squared
//! construct validity with Cramér's V effect sizes.

pub mod coder;
pub mod dataset;
pub mod interventions;
pub mod metrics;
pub mod numeric;
pub mod report;
pub mod sampling;
pub mod synthetic;
pub mod taxonomy;
pub mod validity;

pub use coder::{CoderBackend, CodingRun, HttpChatConfig, Prediction};
pub use dataset::{CaseRecord, ColumnMap, Corpus, Provenance};
pub use interventions::{ClassDefinitions, InterventionKind, PromptPlan, PromptTemplates};
pub use metrics::{AgreementReport, ConfusionMatrix};
pub use report::{Format, ReportBundle};
pub use sampling::{AssumptionCheck, DesignSearchParams, SampleSet};
pub use taxonomy::{LabelRef, LabelScheme, Level, Normalized};
pub use validity::{ChiSquareResult, ValiditySummary};
