//! Multi-turn search rollouts and single-turn decodes.

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::parse::{extract_answer, find_block};
use super::prompts::single_turn_messages;
use super::{ChatMessage, ChatRequest, Gateway, ModelRole, PolicyError, Role, Sampling};
use crate::retrieval::{index::leading_window, SearchHandle, Snippet};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutLimits {
    pub max_assistant_turns: usize,
    /// Tool messages are cut to this many normalized tokens.
    pub tool_response_tokens: usize,
}

impl Default for RolloutLimits {
    fn default() -> Self {
        Self {
            max_assistant_turns: 5,
            tool_response_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    FinalAnswer,
    TurnLimit,
    ParseFailure,
    EndpointUnreachable,
    ProtocolError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
    /// Query of the search block in an assistant turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_query: Option<String>,
    /// Set on tool turns whose search call failed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tool_failed: bool,
}

impl Turn {
    fn plain(m: &ChatMessage) -> Self {
        Self {
            role: m.role,
            content: m.content.clone(),
            search_query: None,
            tool_failed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutTranscript {
    pub turns: Vec<Turn>,
    pub terminated: TerminationReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RolloutTranscript {
    pub fn assistant_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.role == Role::Assistant)
    }

    pub fn final_assistant(&self) -> Option<&str> {
        self.assistant_turns().last().map(|t| t.content.as_str())
    }

    /// Content of successful tool turns.
    pub fn tool_outputs(&self) -> impl Iterator<Item = &str> {
        self.turns
            .iter()
            .filter(|t| t.role == Role::Tool && !t.tool_failed)
            .map(|t| t.content.as_str())
    }

    /// True when the model did not get to finish because of an endpoint
    /// failure. Such rollouts are excluded from reward groups.
    pub fn failed(&self) -> bool {
        matches!(
            self.terminated,
            TerminationReason::EndpointUnreachable | TerminationReason::ProtocolError
        )
    }

    pub fn final_answer(&self) -> String {
        self.final_assistant().map(extract_answer).unwrap_or_default()
    }

    pub fn final_evidence(&self) -> String {
        self.final_assistant()
            .and_then(|t| find_block(t, "evidence").content)
            .unwrap_or_default()
    }
}

pub fn format_results(snippets: &[Snippet]) -> String {
    let mut out = String::new();
    for (i, s) in snippets.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("Doc {} (Title: {}) {}", i + 1, s.title, s.text));
    }
    if out.is_empty() {
        out.push_str("No results.");
    }
    out
}

/// Runs a rollout with the search tool. Each assistant turn may issue one
/// `<search>` block; a search on the last permitted turn is not executed.
pub async fn run_multiturn(
    gateway: &Gateway,
    role: ModelRole,
    prompt: Vec<ChatMessage>,
    search: &SearchHandle,
    limits: RolloutLimits,
    sampling: Sampling,
    seed: u64,
) -> RolloutTranscript {
    let mut messages = prompt;
    let mut turns: Vec<Turn> = messages.iter().map(Turn::plain).collect();
    let mut terminated = TerminationReason::TurnLimit;
    let mut error = None;

    for step in 0..limits.max_assistant_turns {
        let request = ChatRequest::new(messages.clone(), sampling).with_seed(seeds::derive(seed, &[step as u64]));
        let reply = match gateway.complete(role, &request).await {
            Ok(r) => r,
            Err(e) => {
                terminated = match e {
                    PolicyError::Unreachable { .. } => TerminationReason::EndpointUnreachable,
                    _ => TerminationReason::ProtocolError,
                };
                error = Some(e.to_string());
                break;
            }
        };
        let block = find_block(&reply, "search");
        let query = block.content.clone().filter(|q| !q.is_empty());
        let assistant = ChatMessage::new(Role::Assistant, reply);
        turns.push(Turn {
            search_query: query.clone(),
            ..Turn::plain(&assistant)
        });
        messages.push(assistant);

        let Some(query) = query else {
            terminated = if block.opened {
                TerminationReason::ParseFailure
            } else {
                TerminationReason::FinalAnswer
            };
            break;
        };
        if step + 1 == limits.max_assistant_turns {
            break;
        }
        let (content, tool_failed) = match search.search(&query).await {
            Ok(hits) => {
                let text = format_results(&hits);
                (leading_window(&text, limits.tool_response_tokens).to_owned(), false)
            }
            Err(e) => {
                warn!(error = %e, "search call failed");
                ("Search failed.".to_owned(), true)
            }
        };
        let tool = ChatMessage::new(Role::Tool, content);
        turns.push(Turn {
            tool_failed,
            ..Turn::plain(&tool)
        });
        messages.push(tool);
    }

    RolloutTranscript {
        turns,
        terminated,
        error,
    }
}

/// One decode without tools. With `evidence` the prompt carries a context
/// block and goes to the solver; without it goes to the auxiliary scorer.
/// Returns the extracted answer.
pub async fn run_singleturn(
    gateway: &Gateway,
    question: &str,
    evidence: Option<&str>,
    sampling: Sampling,
    seed: u64,
) -> Result<String, PolicyError> {
    let role = if evidence.is_some() {
        ModelRole::Solver
    } else {
        ModelRole::Auxiliary
    };
    let request = ChatRequest::new(single_turn_messages(question, evidence), sampling).with_seed(seed);
    gateway.note_single_turn();
    let reply = gateway.complete(role, &request).await?;
    Ok(extract_answer(&reply))
}
