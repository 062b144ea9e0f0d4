//! HTTP front end for an index: `POST /search` with `{query, k}`.

use std::sync::Arc;

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use super::{Index, Snippet, DEFAULT_TOP_K};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchRequest {
    pub query: String,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    DEFAULT_TOP_K
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResponse {
    pub snippets: Vec<Snippet>,
}

async fn handle(State(index): State<Arc<Index>>, Json(req): Json<SearchRequest>) -> Json<SearchResponse> {
    Json(SearchResponse {
        snippets: index.search(&req.query, req.k),
    })
}

pub fn router(index: Arc<Index>) -> Router {
    Router::new().route("/search", post(handle)).with_state(index)
}

pub async fn serve(listener: TcpListener, index: Arc<Index>) -> std::io::Result<()> {
    axum::serve(listener, router(index)).await
}
