//! Request, response and error bodies.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use homi_core::acquisition::AcquisitionField;
use homi_core::optimizers::{Condition, Record};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Key width and height in millimetres; metrics are words per minute and
    /// error rate.
    Keyboard,
    /// Unit-square double sphere; metrics are the per-objective values.
    Sphere,
    /// Any box-bounded space; the client reports the scalar objective.
    Custom {
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default)]
        resolution: Option<Vec<usize>>,
        #[serde(default = "default_objectives")]
        objectives: usize,
    },
}

fn default_objectives() -> usize {
    2
}

fn default_budget() -> usize {
    20
}

fn default_condition() -> Condition {
    Condition::NafPlus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub task: TaskSpec,
    #[serde(default = "default_condition")]
    pub condition: Condition,
    #[serde(rename = "T", alias = "budget", default = "default_budget")]
    pub budget: usize,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserveRequest {
    /// Id of the proposal being answered; a stale id is rejected.
    #[serde(default)]
    pub proposal: Option<usize>,
    #[serde(default)]
    pub wpm: Option<f64>,
    #[serde(default, alias = "error")]
    pub error_rate: Option<f64>,
    #[serde(default)]
    pub objectives: Option<Vec<f64>>,
    #[serde(default)]
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsRequest {
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalView {
    /// Iteration the proposal belongs to; echo it back when observing.
    pub id: usize,
    pub index: usize,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestView {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub id: String,
    pub proposal: ProposalView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserveResponse {
    pub complete: bool,
    pub y: f64,
    pub proposal: Option<ProposalView>,
    pub best: Option<BestView>,
    pub history: Option<Vec<Record>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsResponse {
    pub weights: Vec<f64>,
    pub proposal: Option<ProposalView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorView {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldsView {
    pub naf: Option<AcquisitionField>,
    pub ei: Option<AcquisitionField>,
    pub aggregate: Option<AcquisitionField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub task: TaskSpec,
    pub condition: Condition,
    pub t: usize,
    #[serde(rename = "T")]
    pub budget: usize,
    pub complete: bool,
    pub weights: Vec<f64>,
    pub grid: Vec<Vec<f64>>,
    pub pending: Option<ProposalView>,
    pub history: Vec<Record>,
    pub running_best: Option<f64>,
    pub best: Option<BestView>,
    pub p_bar: Option<f64>,
    pub lambda_ei: f64,
    pub posterior: Option<PosteriorView>,
    pub fields: FieldsView,
    pub created_ms: u64,
    pub updated_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub task: TaskSpec,
    pub condition: Condition,
    pub t: usize,
    #[serde(rename = "T")]
    pub budget: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            message: message.into(),
        }
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::CONFLICT,
            code: "conflict",
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            code: "invalid_request",
            message: message.into(),
        }
    }

    pub fn unavailable(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::SERVICE_UNAVAILABLE,
            code: "asset_unavailable",
            message: message.into(),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
        }
    }
}

impl From<homi_core::Error> for ApiError {
    fn from(e: homi_core::Error) -> Self {
        use homi_core::Error as E;
        match e {
            E::Io(_) | E::NumericalFailure(_) | E::Numeric(_) | E::Training(_) => Self::internal(e.to_string()),
            other => Self::invalid(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}
