//! Async client for the analysis API served by `ct-server`.
//!
//! ```no_run
//! # async fn demo() -> Result<(), ct_client::ClientError> {
//! use ct_core::view::ViewQuery;
//! let client = ct_client::Client::new("http://127.0.0.1:8080")?;
//! let view = client.pareto(&ViewQuery::layers(vec![0, 22])).await?;
//! println!("front has {} pairs", view.front.len());
//! # Ok(()) }
//! ```

use ct_core::metrics::ConceptLevel;
use ct_core::view::{DistributionView, MetaView, PairsView, ParetoView, ViewQuery};
use reqwest::Url;
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub use ct_core;

/// Error body sent by the server.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ApiErrorBody {
    pub error_kind: String,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid base url {0:?}")]
    BadUrl(String),
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server returned {status} {}: {}", body.error_kind, body.message)]
    Api { status: u16, body: ApiErrorBody },
    #[error("server returned {status} with an unreadable body: {text}")]
    Unexpected { status: u16, text: String },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ConceptSearch {
    pub query: String,
    pub level: Option<ConceptLevel>,
    pub matches: Vec<ct_core::view::ConceptMatch>,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: Url,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let mut base = Url::parse(base_url).map_err(|_| ClientError::BadUrl(base_url.into()))?;
        if !base.path().ends_with('/') {
            base.set_path(&format!("{}/", base.path()));
        }
        Ok(Self {
            base,
            http: reqwest::Client::new(),
        })
    }

    pub fn base_url(&self) -> &Url {
        &self.base
    }

    fn url(&self, route: &str, params: &[(&str, String)]) -> Result<Url, ClientError> {
        let mut url = self
            .base
            .join(route)
            .map_err(|_| ClientError::BadUrl(route.into()))?;
        if !params.is_empty() {
            let mut pairs = url.query_pairs_mut();
            for (k, v) in params {
                pairs.append_pair(k, v);
            }
        }
        Ok(url)
    }

    /// Raw response body for a route, for byte-level comparisons.
    pub async fn get_text(&self, route: &str, params: &[(&str, String)]) -> Result<(u16, String), ClientError> {
        let resp = self.http.get(self.url(route, params)?).send().await?;
        let status = resp.status().as_u16();
        Ok((status, resp.text().await?))
    }

    async fn get<T: DeserializeOwned>(&self, route: &str, params: &[(&str, String)]) -> Result<T, ClientError> {
        let (status, text) = self.get_text(route, params).await?;
        if (200..300).contains(&status) {
            return serde_json::from_str(&text).map_err(|_| ClientError::Unexpected { status, text });
        }
        match serde_json::from_str::<ApiErrorBody>(&text) {
            Ok(body) => Err(ClientError::Api { status, body }),
            Err(_) => Err(ClientError::Unexpected { status, text }),
        }
    }

    pub async fn meta(&self) -> Result<MetaView, ClientError> {
        self.get("api/meta", &[]).await
    }

    pub async fn pairs(&self, q: &ViewQuery) -> Result<PairsView, ClientError> {
        self.get("api/pairs", &q.to_params()).await
    }

    pub async fn pareto(&self, q: &ViewQuery) -> Result<ParetoView, ClientError> {
        self.get("api/pareto", &q.to_params()).await
    }

    pub async fn distribution(&self, q: &ViewQuery) -> Result<DistributionView, ClientError> {
        self.get("api/distribution", &q.to_params()).await
    }

    pub async fn concepts(&self, query: &str, level: Option<ConceptLevel>) -> Result<ConceptSearch, ClientError> {
        let mut params = vec![("q", query.to_string())];
        if let Some(level) = level {
            params.push(("level", level.as_str().to_string()));
        }
        self.get("api/concepts", &params).await
    }
}
