//! HTTP/JSON service over a pair of task forests.
//!
//! Handlers only read the currently loaded [`ModelBundle`]; [`AppState::swap`]
//! replaces it atomically between requests.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use visdemand_core::exec::Execution;
use visdemand_core::features::{
    feature_index, summary_stats, Dataset, FeatureError, FeatureVector, FieldError, StdKind, FEATURE_COUNT,
    FEATURE_NAMES, IDX_ACC, IDX_D_AVG, IDX_SA, IDX_THETA_AVG, IDX_V_AVG,
};
use visdemand_core::models::{Forest, Matrix, Task};
use visdemand_core::shap::{
    beeswarm_data, dependence_data, force_data, BeeswarmRow, DependenceData, Explanation, ForceData, GlobalSummary,
    ShapError, TreeExplainer, DEFAULT_BEESWARM_TOP_K,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Count,
    Continuous,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub name: String,
    pub index: usize,
    pub kind: FeatureKind,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaResponse {
    pub model_version: String,
    pub features: Vec<FeatureRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub long_glance_probability: f64,
    /// Rounded to whole ms; the exact value is the TGD explanation's
    /// `model_output`.
    pub tgd_ms: i64,
    pub model_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskExplanation {
    pub explanation: Explanation,
    pub force: ForceData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    #[serde(flatten)]
    pub prediction: PredictResponse,
    /// Probability units.
    pub long_glance: TaskExplanation,
    /// Milliseconds.
    pub tgd: TaskExplanation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub mean_abs_shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGlobal {
    pub base_value: f64,
    pub instances: usize,
    pub importance: Vec<ImportanceEntry>,
    pub beeswarm: Vec<BeeswarmRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalResponse {
    pub model_version: String,
    pub long_glance: TaskGlobal,
    pub tgd: TaskGlobal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceResponse {
    pub model_version: String,
    pub long_glance: DependenceData,
    pub tgd: DependenceData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApiError {
    Invalid(Vec<FieldError>),
    BadRequest(String),
    NotFound(String),
    Unavailable(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Invalid(fields) => (
                StatusCode::BAD_REQUEST,
                ErrorBody {
                    error: "invalid feature vector".into(),
                    fields,
                },
            ),
            ApiError::BadRequest(m) => (
                StatusCode::BAD_REQUEST,
                ErrorBody {
                    error: m,
                    fields: vec![],
                },
            ),
            ApiError::NotFound(m) => (
                StatusCode::NOT_FOUND,
                ErrorBody {
                    error: m,
                    fields: vec![],
                },
            ),
            ApiError::Unavailable(m) => (
                StatusCode::SERVICE_UNAVAILABLE,
                ErrorBody {
                    error: m,
                    fields: vec![],
                },
            ),
            ApiError::Internal(m) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                ErrorBody {
                    error: m,
                    fields: vec![],
                },
            ),
        };
        (status, Json(body)).into_response()
    }
}

impl From<ShapError> for ApiError {
    fn from(e: ShapError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub long_glance: Forest,
    pub tgd: Forest,
    version: String,
    schema: Vec<FeatureRange>,
    lg_summary: GlobalSummary,
    tgd_summary: GlobalSummary,
}

fn kind_of(i: usize) -> FeatureKind {
    match i {
        IDX_D_AVG | IDX_V_AVG | IDX_THETA_AVG => FeatureKind::Continuous,
        IDX_ACC | IDX_SA => FeatureKind::Flag,
        _ => FeatureKind::Count,
    }
}

impl ModelBundle {
    /// Checks both forests, derives feature ranges from the training set and
    /// explains up to `background` of its rows for the global views.
    pub fn new(
        long_glance: Forest,
        tgd: Forest,
        training: &Dataset,
        background: usize,
        exec: Execution,
    ) -> Result<Self, String> {
        for (forest, task, label) in [
            (&long_glance, Task::Classification, "long-glance"),
            (&tgd, Task::Regression, "tgd"),
        ] {
            if forest.task != task {
                return Err(format!("{label} model was trained for the other task"));
            }
            if forest.n_features() != FEATURE_COUNT {
                return Err(format!(
                    "{label} model expects {} features, not {FEATURE_COUNT}",
                    forest.n_features()
                ));
            }
        }
        let stats = summary_stats(training, StdKind::Sample).map_err(|e| e.to_string())?;
        let schema = FEATURE_NAMES
            .iter()
            .enumerate()
            .map(|(i, name)| FeatureRange {
                name: name.to_string(),
                index: i,
                kind: kind_of(i),
                min: stats[i].min,
                max: stats[i].max,
            })
            .collect();
        let rows: Vec<[f64; FEATURE_COUNT]> = training.feature_rows().into_iter().take(background).collect();
        let x = Matrix::from_rows(&rows);
        let summarize = |f: &Forest| -> Result<GlobalSummary, String> {
            TreeExplainer::new(f)
                .and_then(|e| e.summarize(&x, exec))
                .map_err(|e| e.to_string())
        };
        let lg_summary = summarize(&long_glance)?;
        let tgd_summary = summarize(&tgd)?;
        let mut h = Sha256::new();
        h.update(long_glance.to_json());
        h.update(tgd.to_json());
        let mut version = hex::encode(h.finalize());
        version.truncate(16);
        Ok(ModelBundle {
            long_glance,
            tgd,
            version,
            schema,
            lg_summary,
            tgd_summary,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn predict(&self, fv: &FeatureVector) -> PredictResponse {
        let row = fv.to_row();
        PredictResponse {
            long_glance_probability: self.long_glance.predict_row(&row),
            tgd_ms: self.tgd.predict_row(&row).round() as i64,
            model_version: self.version.clone(),
        }
    }

    pub fn explain(&self, fv: &FeatureVector) -> Result<ExplainResponse, ShapError> {
        let row = fv.to_row();
        let task = |forest: &Forest| -> Result<TaskExplanation, ShapError> {
            let explanation = TreeExplainer::new(forest)?.explain(&row)?;
            let force = force_data(&explanation, FEATURE_COUNT);
            Ok(TaskExplanation { explanation, force })
        };
        Ok(ExplainResponse {
            prediction: self.predict(fv),
            long_glance: task(&self.long_glance)?,
            tgd: task(&self.tgd)?,
        })
    }

    pub fn schema(&self) -> SchemaResponse {
        SchemaResponse {
            model_version: self.version().to_string(),
            features: self.schema.clone(),
        }
    }

    pub fn global(&self) -> GlobalResponse {
        let task = |s: &GlobalSummary| TaskGlobal {
            base_value: s.base_value,
            instances: s.n_instances(),
            importance: s
                .ranking
                .iter()
                .map(|&j| ImportanceEntry {
                    feature: s.feature_names[j].clone(),
                    mean_abs_shap: s.importance[j],
                })
                .collect(),
            beeswarm: beeswarm_data(s, DEFAULT_BEESWARM_TOP_K),
        };
        GlobalResponse {
            model_version: self.version().to_string(),
            long_glance: task(&self.lg_summary),
            tgd: task(&self.tgd_summary),
        }
    }

    pub fn dependence(&self, feature: &str) -> Result<DependenceResponse, ApiError> {
        let j = feature_index(feature).ok_or_else(|| ApiError::NotFound(format!("unknown feature {feature:?}")))?;
        let dep = |s: &GlobalSummary| {
            dependence_data(s, j).map_err(|e| match e {
                ShapError::TooFewInstances { .. } => ApiError::Unavailable(e.to_string()),
                other => other.into(),
            })
        };
        Ok(DependenceResponse {
            model_version: self.version().to_string(),
            long_glance: dep(&self.lg_summary)?,
            tgd: dep(&self.tgd_summary)?,
        })
    }
}

#[derive(Debug, Default)]
pub struct AppState {
    bundle: RwLock<Option<Arc<ModelBundle>>>,
}

impl AppState {
    pub fn new(bundle: Option<ModelBundle>) -> Arc<Self> {
        Arc::new(AppState {
            bundle: RwLock::new(bundle.map(Arc::new)),
        })
    }

    /// Installs a new bundle; requests already holding the old one finish
    /// against it.
    pub fn swap(&self, bundle: ModelBundle) -> Option<Arc<ModelBundle>> {
        let mut slot = self.bundle.write().unwrap_or_else(|p| p.into_inner());
        slot.replace(Arc::new(bundle))
    }

    pub fn current(&self) -> Result<Arc<ModelBundle>, ApiError> {
        self.bundle
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
            .ok_or_else(|| ApiError::Unavailable("models not loaded".into()))
    }
}

/// Parses a request body into a feature vector, reporting every bad field.
pub fn parse_vector(body: &[u8]) -> Result<FeatureVector, ApiError> {
    let map: serde_json::Map<String, serde_json::Value> =
        serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("body is not a JSON object: {e}")))?;
    let mut named = BTreeMap::new();
    let mut errors = Vec::new();
    for (k, v) in map {
        match v {
            serde_json::Value::Number(n) => {
                named.insert(k, n.as_f64().unwrap_or(f64::NAN));
            }
            serde_json::Value::Bool(b) => {
                named.insert(k, f64::from(u8::from(b)));
            }
            other => errors.push(FieldError {
                field: k,
                reason: format!("expected a number, got {other}"),
            }),
        }
    }
    match FeatureVector::from_named(&named) {
        Ok(fv) if errors.is_empty() => Ok(fv),
        Ok(_) => Err(ApiError::Invalid(errors)),
        Err(FeatureError::Invalid(mut more)) => {
            errors.append(&mut more);
            Err(ApiError::Invalid(errors))
        }
        Err(e) => Err(ApiError::BadRequest(e.to_string())),
    }
}

async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<PredictResponse>, ApiError> {
    let bundle = state.current()?;
    let fv = parse_vector(&body)?;
    Ok(Json(bundle.predict(&fv)))
}

async fn explain(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ExplainResponse>, ApiError> {
    let bundle = state.current()?;
    let fv = parse_vector(&body)?;
    Ok(Json(bundle.explain(&fv)?))
}

async fn global(State(state): State<Arc<AppState>>) -> Result<Json<GlobalResponse>, ApiError> {
    Ok(Json(state.current()?.global()))
}

async fn dependence(
    State(state): State<Arc<AppState>>,
    Path(feature): Path<String>,
) -> Result<Json<DependenceResponse>, ApiError> {
    Ok(Json(state.current()?.dependence(&feature)?))
}

async fn schema(State(state): State<Arc<AppState>>) -> Result<Json<SchemaResponse>, ApiError> {
    Ok(Json(state.current()?.schema()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/explain", post(explain))
        .route("/global", get(global))
        .route("/dependence/{feature}", get(dependence))
        .route("/schema", get(schema))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
