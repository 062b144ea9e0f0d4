//! Prompt templates. The mock endpoint in `simcheck` keys off the markers
//! defined here, so keep the two in step.

use super::{ChatMessage, Role};
use crate::retrieval::CorpusDocument;
use crate::reward::Hop;
use crate::selector::TaskType;

pub const PROPOSER_MARKER: &str = "You write one training question from a source document.";
pub const SOLVER_MARKER: &str = "You answer questions with the help of a search tool.";
pub const SINGLE_TURN_MARKER: &str = "Answer the question in a single reply without searching.";
pub const JUDGE_MARKER: &str = "You check whether a cited passage supports an answer.";

pub const HOP_PREFIX: &str = "Hop count: ";
pub const DOC_ID_PREFIX: &str = "Document id: ";
pub const QUESTION_PREFIX: &str = "Question: ";
pub const ANSWER_PREFIX: &str = "Answer: ";

const TAG_GUIDE: &str = "Reason inside <think>...</think>. To search, write <search>query</search> \
and wait for the results. Each assistant turn may issue at most one search.";

pub fn proposer_messages(doc: &CorpusDocument, hop: Hop, task: Option<TaskType>) -> Vec<ChatMessage> {
    let mut system = format!(
        "{PROPOSER_MARKER}\n{TAG_GUIDE}\n\
         The question must need {h} reasoning step(s) to answer and must not contain its answer. \
         Finish with <question>...</question>, <answer>...</answer> and \
         <evidence>...</evidence>, where the evidence is copied word for word from the document \
         or the search results.",
        h = hop.get(),
    );
    if let Some(t) = task {
        system.push_str(&format!("\nGenerate a {} question.", t.label()));
    }
    let user = format!(
        "{HOP_PREFIX}{}\n{DOC_ID_PREFIX}{}\nTitle: {}\n<document>\n{}\n</document>",
        hop.get(),
        doc.id,
        doc.title,
        doc.text
    );
    vec![ChatMessage::new(Role::System, system), ChatMessage::new(Role::User, user)]
}

pub fn solver_messages(question: &str) -> Vec<ChatMessage> {
    let system = format!(
        "{SOLVER_MARKER}\n{TAG_GUIDE}\n\
         Finish with <answer>...</answer> and quote the passage that supports it in \
         <evidence>...</evidence>."
    );
    vec![
        ChatMessage::new(Role::System, system),
        ChatMessage::new(Role::User, format!("{QUESTION_PREFIX}{question}")),
    ]
}

/// The with-evidence and without-evidence variants differ only in the
/// `<context>` block.
pub fn single_turn_messages(question: &str, evidence: Option<&str>) -> Vec<ChatMessage> {
    let system = format!("{SINGLE_TURN_MARKER}\nReply with the answer only, inside <answer>...</answer>.");
    let mut user = format!("{QUESTION_PREFIX}{question}");
    if let Some(e) = evidence {
        user.push_str(&format!("\n<context>\n{e}\n</context>"));
    }
    vec![ChatMessage::new(Role::System, system), ChatMessage::new(Role::User, user)]
}

pub fn judge_messages(question: &str, answer: &str, evidence: &str) -> Vec<ChatMessage> {
    let system = format!(
        "{JUDGE_MARKER}\nReply <answer>yes</answer> if the passage on its own establishes \
         the answer to the question, otherwise reply <answer>no</answer>."
    );
    let user = format!("{QUESTION_PREFIX}{question}\n{ANSWER_PREFIX}{answer}\n<evidence>\n{evidence}\n</evidence>");
    vec![ChatMessage::new(Role::System, system), ChatMessage::new(Role::User, user)]
}

/// Value following `prefix` on its own line.
pub fn field<'a>(text: &'a str, prefix: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(prefix)).map(str::trim)
}
