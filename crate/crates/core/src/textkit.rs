//! Answer normalization, match metrics and structural validity checks.
//!
//! Every reward in the crate goes through [`normalize`]: lowercase, strip
//! Unicode punctuation and symbols, split on whitespace and drop the articles
//! `a`, `an` and `the`.

use std::collections::HashMap;

use unicode_general_category::{get_general_category, GeneralCategory};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Normalized form of a piece of text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedText {
    tokens: Vec<String>,
    raw: String,
}

impl NormalizedText {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn word_len(&self) -> usize {
        self.tokens.len()
    }

    /// Tokens joined by single spaces.
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }

    /// True when `needle`'s tokens occur as a contiguous run inside `self`.
    /// An empty needle is contained in everything.
    pub fn contains_run(&self, needle: &NormalizedText) -> bool {
        contains_subsequence(&self.tokens, &needle.tokens)
    }
}

fn is_punct_or_symbol(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
            | MathSymbol
            | CurrencySymbol
            | ModifierSymbol
            | OtherSymbol
    )
}

pub fn normalize(text: &str) -> NormalizedText {
    let stripped: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !is_punct_or_symbol(*c))
        .collect();
    let tokens = stripped
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .map(str::to_owned)
        .collect();
    NormalizedText {
        tokens,
        raw: text.to_owned(),
    }
}

pub fn contains_subsequence(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() {
        return true;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

pub fn exact_match(pred: &str, gold: &str) -> bool {
    normalize(pred).tokens == normalize(gold).tokens
}

/// SQuAD-style token F1 over normalized token multisets.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    token_f1_tokens(normalize(pred).tokens(), normalize(gold).tokens())
}

pub fn token_f1_tokens(pred: &[String], gold: &[String]) -> f64 {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *gold_counts.entry(t.as_str()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = gold_counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Validity filter for a generated question/answer pair: both non-empty and
/// the normalized answer is not a contiguous token run of the normalized
/// question.
pub fn is_valid_pair(question: &str, answer: &str) -> bool {
    if question.trim().is_empty() || answer.trim().is_empty() {
        return false;
    }
    let q = normalize(question);
    let a = normalize(answer);
    !q.contains_run(&a)
}

pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whether `span` was copied verbatim (modulo whitespace) from one of
/// `sources`. Case is preserved. An empty span is never verbatim.
pub fn is_verbatim_span<S: AsRef<str>>(span: &str, sources: &[S]) -> bool {
    let span = collapse_whitespace(span);
    if span.is_empty() {
        return false;
    }
    sources
        .iter()
        .any(|s| collapse_whitespace(s.as_ref()).contains(&span))
}
