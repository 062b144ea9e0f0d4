//! Loopback HTTP front end for a chat endpoint, speaking the same wire
//! protocol as [`crate::policy::HttpEndpoint`].

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::policy::{ChatEndpoint, ChatRequest};

pub const COMPLETIONS_PATH: &str = "/v1/chat/completions";

async fn handle(
    State(endpoint): State<Arc<dyn ChatEndpoint>>,
    Json(request): Json<ChatRequest>,
) -> Result<Json<Value>, (StatusCode, String)> {
    let content = endpoint
        .complete(&request)
        .await
        .map_err(|e| (StatusCode::BAD_REQUEST, e.to_string()))?;
    Ok(Json(json!({
        "object": "chat.completion",
        "model": request.model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }]
    })))
}

pub fn router(endpoint: Arc<dyn ChatEndpoint>) -> Router {
    Router::new()
        .route(COMPLETIONS_PATH, post(handle))
        .with_state(endpoint)
}

pub async fn serve(listener: TcpListener, endpoint: Arc<dyn ChatEndpoint>) -> std::io::Result<()> {
    axum::serve(listener, router(endpoint)).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::prompts::single_turn_messages;
    use crate::policy::{run_singleturn, Gateway, HttpEndpoint, Sampling};
    use crate::simcheck::{MockConfig, MockEndpoint, SimPolicy};

    #[tokio::test]
    async fn http_path_matches_in_process() {
        let cfg = MockConfig { policy: SimPolicy { p: 0.5, p_plus: 1.0 }, ..MockConfig::default() };
        let rows = [("q?".to_string(), "gold".to_string(), "ev".to_string())];
        let mock: Arc<dyn ChatEndpoint> = Arc::new(MockEndpoint::new(cfg, None).with_answers(rows.clone()));
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(serve(listener, mock.clone()));

        let http = Arc::new(HttpEndpoint::new(format!("http://{addr}{COMPLETIONS_PATH}"), "sim"));
        let remote = Gateway::uniform(http, 2);
        let local = Gateway::uniform(mock, 2);
        for seed in 0..20 {
            let a = run_singleturn(&remote, "q?", None, Sampling::SINGLE_TURN, seed).await.unwrap();
            let b = run_singleturn(&local, "q?", None, Sampling::SINGLE_TURN, seed).await.unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(run_singleturn(&remote, "q?", Some("ev"), Sampling::SINGLE_TURN, 0).await.unwrap(), "gold");
    }

    #[tokio::test]
    async fn endpoint_errors_become_http_errors() {
        let mock: Arc<dyn ChatEndpoint> = Arc::new(MockEndpoint::new(MockConfig::default(), None));
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(serve(listener, mock));
        let http = HttpEndpoint::new(format!("http://{addr}{COMPLETIONS_PATH}"), "sim");
        let mut req = ChatRequest::new(single_turn_messages("q", None), Sampling::SINGLE_TURN);
        req.messages[0].content = "something else".into();
        let err = http.complete(&req).await.unwrap_err();
        assert!(matches!(err, crate::policy::EndpointError::Status { status: 400, .. }));
    }
}
