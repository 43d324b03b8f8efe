//! Read-only HTTP/JSON API over one analysis result.
//!
//! | route               | payload                          |
//! |---------------------|----------------------------------|
//! | `GET /api/meta`     | config, layers, concepts, counts |
//! | `GET /api/pairs`    | pairs in a view scope            |
//! | `GET /api/pareto`   | pairs, front, knee, top-k, histogram |
//! | `GET /api/distribution` | 32-bin histogram of a metric |
//! | `GET /api/concepts?q=&level=` | concept search         |
//!
//! View routes take the `ViewQuery` parameters as a query string. Errors
//! are JSON bodies `{error_kind, message, detail}`. Everything else is
//! served from the static directory when one is configured.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use ct_core::metrics::ConceptLevel;
use ct_core::result::AnalysisResult;
use ct_core::view::{self, ConceptMatch, ViewQuery};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

/// JSON error body returned by every failing route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error_kind: String,
    pub message: String,
    pub detail: serde_json::Value,
    #[serde(skip)]
    status: Option<u16>,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>, detail: serde_json::Value) -> Self {
        Self {
            error_kind: kind.into(),
            message: message.into(),
            detail,
            status: Some(status.as_u16()),
        }
    }

    fn from_core(err: ct_core::Error, params: &[(String, String)]) -> Self {
        let status = match &err {
            ct_core::Error::NotFound(_) => StatusCode::NOT_FOUND,
            ct_core::Error::InvalidInput(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, err.kind(), err.to_string(), params_detail(params))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self
            .status
            .and_then(|s| StatusCode::from_u16(s).ok())
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn params_detail(params: &[(String, String)]) -> serde_json::Value {
    let map: BTreeMap<&str, &str> = params.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    serde_json::json!({ "params": map })
}

type Params = Result<Query<Vec<(String, String)>>, QueryRejection>;

fn params(raw: Params) -> Result<Vec<(String, String)>, ApiError> {
    raw.map(|Query(p)| p).map_err(|rej| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "InvalidQuery",
            rej.body_text(),
            serde_json::Value::Null,
        )
    })
}

fn view_query(raw: Params) -> Result<(ViewQuery, Vec<(String, String)>), ApiError> {
    let p = params(raw)?;
    let q = ViewQuery::from_params(p.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .map_err(|e| ApiError::from_core(e, &p))?;
    Ok((q, p))
}

type Shared = Arc<AnalysisResult>;

async fn meta(State(result): State<Shared>) -> Json<view::MetaView> {
    Json(view::meta(&result))
}

async fn pairs(State(result): State<Shared>, raw: Params) -> Result<Json<view::PairsView>, ApiError> {
    let (q, p) = view_query(raw)?;
    view::query_pairs(&result, &q)
        .map(Json)
        .map_err(|e| ApiError::from_core(e, &p))
}

async fn pareto(State(result): State<Shared>, raw: Params) -> Result<Json<view::ParetoView>, ApiError> {
    let (q, p) = view_query(raw)?;
    view::query_view(&result, &q)
        .map(Json)
        .map_err(|e| ApiError::from_core(e, &p))
}

async fn distribution(State(result): State<Shared>, raw: Params) -> Result<Json<view::DistributionView>, ApiError> {
    let (q, p) = view_query(raw)?;
    view::query_distribution(&result, &q)
        .map(Json)
        .map_err(|e| ApiError::from_core(e, &p))
}

/// Response of `GET /api/concepts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSearch {
    pub query: String,
    pub level: Option<ConceptLevel>,
    pub matches: Vec<ConceptMatch>,
}

async fn concepts(State(result): State<Shared>, raw: Params) -> Result<Json<ConceptSearch>, ApiError> {
    let p = params(raw)?;
    let mut query = String::new();
    let mut level = None;
    for (k, v) in &p {
        match k.as_str() {
            "q" | "concept" => query = v.clone(),
            "level" => level = Some(v.parse::<ConceptLevel>().map_err(|e| ApiError::from_core(e, &p))?),
            other => {
                return Err(ApiError::from_core(
                    ct_core::Error::invalid(format!("unknown query parameter {other:?}")),
                    &p,
                ))
            }
        }
    }
    let matches = view::search_concepts(&result, &query, level);
    Ok(Json(ConceptSearch { query, level, matches }))
}

async fn api_not_found() -> ApiError {
    ApiError::new(
        StatusCode::NOT_FOUND,
        "NotFound",
        "no such API route",
        serde_json::Value::Null,
    )
}

/// Builds the application. Static assets come from `static_dir` when given.
pub fn router(result: Arc<AnalysisResult>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/meta", get(meta))
        .route("/pairs", get(pairs))
        .route("/pareto", get(pareto))
        .route("/distribution", get(distribution))
        .route("/concepts", get(concepts))
        .fallback(api_not_found)
        .with_state(result);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app,
    }
}

/// Serves `app` on `listener` until ctrl-c.
pub async fn serve(listener: TcpListener, app: Router) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "serving analysis API");
    }
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
