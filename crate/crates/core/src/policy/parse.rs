//! Tag extraction from model output.

use serde::{Deserialize, Serialize};

use super::rollout::{RolloutTranscript, TerminationReason};
use super::Role;
use crate::reward::FormatCounts;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlockParse {
    /// Trimmed content of the first complete block.
    pub content: Option<String>,
    /// An opening tag occurs somewhere in the text.
    pub opened: bool,
    pub duplicate: bool,
    pub nested: bool,
}

/// Finds `<tag>...</tag>`. The first complete block wins: the earliest
/// closing tag paired with the nearest opening tag before it.
pub fn find_block(text: &str, tag: &str) -> BlockParse {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let opens = text.matches(open.as_str()).count();
    let mut out = BlockParse {
        opened: opens > 0,
        duplicate: opens > 1,
        ..BlockParse::default()
    };
    let Some(end) = text.find(close.as_str()) else {
        return out;
    };
    let head = &text[..end];
    if let Some(start) = head.rfind(open.as_str()) {
        out.nested = head.matches(open.as_str()).count() > 1;
        out.content = Some(head[start + open.len()..].trim().to_owned());
    }
    out
}

const QUOTES: &[char] = &['"', '\'', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}', '`'];

/// The `<answer>` block, else the last non-empty line, stripped of
/// surrounding whitespace and quotes.
pub fn extract_answer(text: &str) -> String {
    let raw = match find_block(text, "answer").content {
        Some(a) => a,
        None => text
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .unwrap_or("")
            .to_owned(),
    };
    raw.trim().trim_matches(QUOTES).trim().to_owned()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProposerOutput {
    pub question: String,
    pub answer: String,
    pub evidence: String,
    pub counts: FormatCounts,
    /// Source document followed by every returned tool message.
    pub sources: Vec<String>,
    pub warnings: Vec<String>,
}

impl ProposerOutput {
    pub fn parse_ok(&self) -> bool {
        self.counts.parse_ok
    }
}

fn opens_with_plan(turn: &str) -> bool {
    turn.trim_start().starts_with("<think>") && find_block(turn, "think").content.is_some()
}

/// Reads the question, answer and evidence from the final assistant turn and
/// tallies the structural counts used by the format reward.
pub fn parse_proposer(transcript: &RolloutTranscript, document: &str) -> ProposerOutput {
    let mut out = ProposerOutput::default();
    for t in &transcript.turns {
        match t.role {
            Role::Assistant => {
                out.counts.assistant_turns += 1;
                if opens_with_plan(&t.content) {
                    out.counts.planning_turns += 1;
                }
                if t.search_query.is_some() {
                    out.counts.valid_tool_calls += 1;
                }
            }
            Role::Tool if !t.tool_failed => out.counts.returned_responses += 1,
            _ => {}
        }
    }
    out.sources.push(document.to_owned());
    out.sources.extend(transcript.tool_outputs().map(str::to_owned));

    let last = transcript.final_assistant().unwrap_or("");
    let mut complete = true;
    for (tag, slot) in [
        ("question", &mut out.question),
        ("answer", &mut out.answer),
        ("evidence", &mut out.evidence),
    ] {
        let b = find_block(last, tag);
        if b.duplicate {
            out.warnings.push(format!("duplicate <{tag}> block"));
        }
        if b.nested {
            out.warnings.push(format!("nested <{tag}> block"));
        }
        match b.content {
            Some(c) => *slot = c,
            None => complete = false,
        }
    }
    out.counts.parse_ok = complete && transcript.terminated == TerminationReason::FinalAnswer;
    out
}
