//! The generation and validation protocol, reports, and the staged pipeline.

mod baseline;
mod pipeline;
mod protocol;
mod report;

pub use baseline::{run_gp_protocol, BaselineConfig, BaselineLabels, GpTargetRun, Prevalidation};
pub use pipeline::{
    read_manifest, BaselineArtifacts, PipelineConfig, Report, RunManifest, TuningConfig, Workspace, AUGMENTED_FILE,
    BASELINE_FILE, DATASET_FILE, HISTORY_FILE, INN_FILE, MANIFEST_FILE, REPORT_FILE, REPORT_TEXT_FILE,
    SELECTED_FILE, SURROGATE_FILE, SURROGATE_REPORT_FILE, TIMINGS_FILE, TUNED_CONFIG_FILE, TUNING_RESULT_FILE, TUNING_TRACE_FILE,
    VALIDATION_FILE,
};
pub use protocol::{
    farthest_point, filter_designs, generate_candidates, normalized_distance, prevalidate_select,
    run_inn_protocol, select_from_candidates, target_seed, FilterOutcome, GenerationConfig, LabelPredictor,
    Selection, SelectionConfig, TargetGrid, TargetOutcome,
};
pub use report::{
    compare, label_outcomes, mean, relative_difference_pct, render_comparison, render_validation, sample_std,
    validation_report, ComparisonRow, LabelValueRow, LabeledTarget, ValidationReport,
};

use crate::domain::DomainError;
use crate::flow::FlowError;
use crate::gp::GpError;
use crate::persist::PersistError;
use crate::surrogate::SurrogateError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
