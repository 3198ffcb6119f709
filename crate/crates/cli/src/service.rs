//! Read-only JSON service over a trained run directory.

use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use invdesign_core::domain::{
    DesignParams, LabeledDataset, Oracle, ParamName, PerformanceLabels, N_LABELS, N_PARAMS, PARAM_RANGES,
};
use invdesign_core::flow::InnModel;
use invdesign_core::gp::{gp_inverse_design, GpTriple, NelderMeadConfig};
use invdesign_core::surrogate::SurrogateTriple;
use invdesign_core::workflow::{
    generate_candidates, normalized_distance, read_manifest, LabelPredictor, PipelineConfig, RunManifest,
    WorkflowError, DATASET_FILE, INN_FILE, SURROGATE_FILE,
};

pub const MAX_GENERATE: usize = 20_000;
pub const MAX_BASELINE_STARTS: usize = 2_000;
pub const MAX_VALIDATE: usize = 10_000;

/// Models loaded once at startup and shared read-only by every request.
pub struct ServiceState {
    pub inn: InnModel,
    pub surrogates: SurrogateTriple,
    pub gps: GpTriple,
    pub spans: [f64; N_LABELS],
    pub manifest: Option<RunManifest>,
    pub nelder_mead: NelderMeadConfig,
    pub seed: u64,
}

impl ServiceState {
    /// Loads `inn.json`, `surrogates.json` and `dataset.csv` from a run directory
    /// and fits the GP baseline on the training split.
    pub fn load(dir: &Path, seed: u64) -> Result<Self, WorkflowError> {
        let manifest = read_manifest(dir).ok();
        let config = manifest.as_ref().map(|m| m.config.clone()).unwrap_or_else(PipelineConfig::default);
        let data = LabeledDataset::read(dir.join(DATASET_FILE))?;
        let spans = data.label_spans();
        let (train, _) = data.split_at(config.n_train.min(data.len()));
        let gps = GpTriple::fit(&train, &config.baseline.gp)?;
        Ok(Self {
            inn: InnModel::load(dir.join(INN_FILE))?,
            surrogates: SurrogateTriple::load(dir.join(SURROGATE_FILE))?,
            gps,
            spans,
            manifest,
            nelder_mead: config.baseline.nelder_mead,
            seed,
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.into(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    #[serde(rename = "U_M")]
    pub unmixedness: f64,
    #[serde(rename = "dp_rel")]
    pub pressure_loss: f64,
    #[serde(rename = "G")]
    pub growth_rate: f64,
}

impl Labels {
    fn to_array(self) -> [f64; N_LABELS] {
        [self.unmixedness, self.pressure_loss, self.growth_rate]
    }

    fn from_array(v: [f64; N_LABELS]) -> Self {
        Self {
            unmixedness: v[0],
            pressure_loss: v[1],
            growth_rate: v[2],
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParamBounds {
    pub name: ParamName,
    pub description: String,
    pub min: f64,
    pub max: f64,
    pub integer: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub targets: Labels,
    pub count: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GeneratedDesign {
    /// Raw generator output; N_H is continuous here.
    pub raw: [f64; N_PARAMS],
    pub valid: bool,
    pub design: Option<DesignParams>,
    pub predicted: Option<Labels>,
    /// Range-normalized distance of the prediction to the target.
    pub distance: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub targets: Labels,
    pub generated: usize,
    pub valid: usize,
    /// Valid designs by ascending predicted distance, then invalid ones.
    pub designs: Vec<GeneratedDesign>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub designs: Vec<[f64; N_PARAMS]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidatedDesign {
    pub valid: bool,
    pub error: Option<String>,
    pub labels: Option<Labels>,
    /// G above 1, which reports clip to 1.
    pub growth_rate_clipped: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub results: Vec<ValidatedDesign>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BaselineRequest {
    pub targets: Labels,
    /// Number of Nelder-Mead starts.
    pub count: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BaselineCandidate {
    pub raw: [f64; N_PARAMS],
    pub residual: f64,
    pub valid: bool,
    pub design: Option<DesignParams>,
    pub predicted: Labels,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BaselineResponse {
    pub targets: Labels,
    pub starts: usize,
    pub valid: usize,
    /// Candidates by ascending residual.
    pub candidates: Vec<BaselineCandidate>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub manifest: Option<RunManifest>,
    pub inn_blocks: usize,
    pub inn_hidden_width: usize,
    pub inn_parameters: usize,
    pub gp_rows: usize,
    pub label_spans: Labels,
}

fn check_target(t: Labels) -> Result<[f64; N_LABELS], ApiError> {
    let a = t.to_array();
    PerformanceLabels::from_array(a)
        .validate()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(a)
}

fn check_count(count: usize, max: usize) -> Result<(), ApiError> {
    if count == 0 || count > max {
        return Err(ApiError::bad_request(format!("count {count} must lie in [1, {max}]")));
    }
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn ranges() -> Json<Vec<ParamBounds>> {
    Json(
        ParamName::ALL
            .iter()
            .zip(PARAM_RANGES)
            .map(|(n, r)| ParamBounds {
                name: *n,
                description: n.description().to_string(),
                min: r.min,
                max: r.max,
                integer: *n == ParamName::HoleCount,
            })
            .collect(),
    )
}

async fn model_info(State(s): State<Arc<ServiceState>>) -> Json<ModelInfo> {
    Json(ModelInfo {
        manifest: s.manifest.clone(),
        inn_blocks: s.inn.config.blocks,
        inn_hidden_width: s.inn.config.hidden_width,
        inn_parameters: s.inn.param_count(),
        gp_rows: s.gps.models[0].n_train(),
        label_spans: Labels::from_array(s.spans),
    })
}

fn run_generate(s: &ServiceState, req: GenerateRequest) -> Result<GenerateResponse, ApiError> {
    let target = check_target(req.targets)?;
    check_count(req.count, MAX_GENERATE)?;
    let raw = generate_candidates(&s.inn, &target, req.count, req.seed.unwrap_or(s.seed))
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let designs: Vec<Option<DesignParams>> = raw.iter().map(|r| DesignParams::try_from_continuous(*r).ok()).collect();
    let valid: Vec<DesignParams> = designs.iter().flatten().copied().collect();
    let predicted = s.surrogates.predict(&valid).map_err(|e| ApiError::internal(e.to_string()))?;
    let mut preds = predicted.into_iter();
    let mut out: Vec<GeneratedDesign> = raw
        .iter()
        .zip(designs)
        .map(|(r, d)| {
            let p = d.and_then(|_| preds.next());
            GeneratedDesign {
                raw: *r,
                valid: d.is_some(),
                design: d,
                predicted: p.map(Labels::from_array),
                distance: p.map(|p| normalized_distance(&p, &target, &s.spans)),
            }
        })
        .collect();
    out.sort_by(|a, b| match (a.distance, b.distance) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(GenerateResponse {
        targets: req.targets,
        generated: raw.len(),
        valid: valid.len(),
        designs: out,
    })
}

async fn generate(
    State(s): State<Arc<ServiceState>>,
    payload: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<Json<GenerateResponse>, ApiError> {
    let Json(req) = payload?;
    blocking(move || run_generate(&s, req)).await.map(Json)
}

fn run_validate(req: ValidateRequest) -> Result<ValidateResponse, ApiError> {
    if req.designs.is_empty() || req.designs.len() > MAX_VALIDATE {
        return Err(ApiError::bad_request(format!(
            "number of designs {} must lie in [1, {MAX_VALIDATE}]",
            req.designs.len()
        )));
    }
    let oracle = Oracle::deterministic();
    let results = req
        .designs
        .iter()
        .map(|raw| match DesignParams::try_from_continuous(*raw).and_then(|d| oracle.evaluate(&d)) {
            Ok(y) => ValidatedDesign {
                valid: true,
                error: None,
                labels: Some(Labels::from_array(y.to_array())),
                growth_rate_clipped: y.growth_rate > 1.0,
            },
            Err(e) => ValidatedDesign {
                valid: false,
                error: Some(e.to_string()),
                labels: None,
                growth_rate_clipped: false,
            },
        })
        .collect();
    Ok(ValidateResponse { results })
}

async fn validate(payload: Result<Json<ValidateRequest>, JsonRejection>) -> Result<Json<ValidateResponse>, ApiError> {
    let Json(req) = payload?;
    blocking(move || run_validate(req)).await.map(Json)
}

fn run_baseline(s: &ServiceState, req: BaselineRequest) -> Result<BaselineResponse, ApiError> {
    let target = check_target(req.targets)?;
    check_count(req.count, MAX_BASELINE_STARTS)?;
    let mut cands = gp_inverse_design(
        &s.gps,
        &target,
        &s.spans,
        req.count,
        req.seed.unwrap_or(s.seed),
        &s.nelder_mead,
    )
    .map_err(|e| ApiError::internal(e.to_string()))?;
    cands.sort_by(|a, b| a.residual.total_cmp(&b.residual));
    let candidates: Vec<BaselineCandidate> = cands
        .iter()
        .map(|c| {
            let design = DesignParams::try_from_continuous(c.x).ok();
            BaselineCandidate {
                raw: c.x,
                residual: c.residual,
                valid: design.is_some(),
                design,
                predicted: Labels::from_array(s.gps.predict_mean(&c.x)),
            }
        })
        .collect();
    Ok(BaselineResponse {
        targets: req.targets,
        starts: req.count,
        valid: candidates.iter().filter(|c| c.valid).count(),
        candidates,
    })
}

async fn baseline(
    State(s): State<Arc<ServiceState>>,
    payload: Result<Json<BaselineRequest>, JsonRejection>,
) -> Result<Json<BaselineResponse>, ApiError> {
    let Json(req) = payload?;
    blocking(move || run_baseline(&s, req)).await.map(Json)
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/ranges", get(ranges))
        .route("/model/info", get(model_info))
        .route("/generate", post(generate))
        .route("/validate", post(validate))
        .route("/baseline", post(baseline))
        .with_state(state)
}
