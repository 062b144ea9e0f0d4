//! Question/answer/evidence rows shared by dataset generation, solver
//! training and evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};
use crate::reward::Hop;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub question: String,
    #[serde(alias = "gold_answer", alias = "golden_answer")]
    pub answer: String,
    /// Gold evidence span; empty for benchmark rows that carry none.
    #[serde(default)]
    pub evidence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hop: Option<Hop>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
}

impl DatasetRow {
    pub fn new(question: impl Into<String>, answer: impl Into<String>, evidence: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            answer: answer.into(),
            evidence: evidence.into(),
            hop: None,
            doc_id: None,
        }
    }
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRow>, JsonlError> {
    jsonl::read(path)
}

pub fn write_dataset(path: &Path, rows: &[DatasetRow]) -> Result<(), JsonlError> {
    jsonl::write(path, rows)
}
