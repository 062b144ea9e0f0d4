//! OpenAI-compatible chat-completion client.

use async_trait::async_trait;
use serde::Deserialize;

use super::{ChatEndpoint, ChatRequest, EndpointError};

const EXCERPT_CHARS: usize = 200;

pub struct HttpEndpoint {
    client: reqwest::Client,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpEndpoint {
    /// `url` is the full completions route, for example
    /// `http://localhost:8000/v1/chat/completions`.
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            url: url.into(),
            model: model.into(),
            api_key: None,
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: AssistantMessage,
}

#[derive(Deserialize)]
struct AssistantMessage {
    #[serde(default)]
    content: Option<String>,
}

fn excerpt(s: &str) -> String {
    s.chars().take(EXCERPT_CHARS).collect()
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn parse_completion(body: &str) -> Result<String, EndpointError> {
    let parsed: CompletionBody = serde_json::from_str(body)
        .map_err(|e| EndpointError::Protocol(format!("{e}; body: {}", excerpt(body))))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| EndpointError::Protocol(format!("no content; body: {}", excerpt(body))))
}

#[async_trait]
impl ChatEndpoint for HttpEndpoint {
    async fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let mut body = request.clone();
        body.model = self.model.clone();
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(EndpointError::Status {
                status: status.as_u16(),
                body: excerpt(&text),
            });
        }
        parse_completion(&text)
    }
}
