//! The shared search engine: given a text query, return a short list of
//! snippets drawn from the corpus.

pub mod index;
pub mod server;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use thiserror::Error;

pub use index::{ingest, read_corpus, CorpusDocument, Index, Snippet};

/// Passages returned per search call.
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("malformed corpus record on line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("index encoding: {0}")]
    Encode(#[source] serde_json::Error),
    #[error("unsupported index version {0}")]
    Version(u32),
    #[error("remote search failed: {0}")]
    Remote(String),
}

#[async_trait]
pub trait SearchBackend: Send + Sync {
    async fn search(&self, query: &str, k: usize) -> Result<Vec<Snippet>, RetrievalError>;
}

#[async_trait]
impl SearchBackend for Index {
    async fn search(&self, query: &str, k: usize) -> Result<Vec<Snippet>, RetrievalError> {
        Ok(Index::search(self, query, k))
    }
}

/// Client for a search server started with [`server::serve`].
pub struct RemoteSearch {
    client: reqwest::Client,
    url: String,
}

impl RemoteSearch {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            url: url.into(),
        }
    }
}

#[async_trait]
impl SearchBackend for RemoteSearch {
    async fn search(&self, query: &str, k: usize) -> Result<Vec<Snippet>, RetrievalError> {
        let resp = self
            .client
            .post(&self.url)
            .json(&server::SearchRequest {
                query: query.to_owned(),
                k,
            })
            .send()
            .await
            .map_err(|e| RetrievalError::Remote(e.to_string()))?
            .error_for_status()
            .map_err(|e| RetrievalError::Remote(e.to_string()))?;
        let body: server::SearchResponse = resp
            .json()
            .await
            .map_err(|e| RetrievalError::Remote(e.to_string()))?;
        Ok(body.snippets)
    }
}

/// Shared, cloneable search handle that counts calls.
#[derive(Clone)]
pub struct SearchHandle {
    backend: Arc<dyn SearchBackend>,
    calls: Arc<AtomicUsize>,
    top_k: usize,
}

impl SearchHandle {
    pub fn new(backend: Arc<dyn SearchBackend>) -> Self {
        Self {
            backend,
            calls: Arc::new(AtomicUsize::new(0)),
            top_k: DEFAULT_TOP_K,
        }
    }

    pub fn local(index: Arc<Index>) -> Self {
        Self::new(index)
    }

    pub fn with_top_k(mut self, k: usize) -> Self {
        self.top_k = k;
        self
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub async fn search(&self, query: &str) -> Result<Vec<Snippet>, RetrievalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.backend.search(query, self.top_k).await
    }
}
