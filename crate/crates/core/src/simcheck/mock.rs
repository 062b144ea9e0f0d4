//! In-process chat endpoint driven by simulated policies.
//!
//! The mock recognizes which model it is playing from the system prompt.
//! Generated questions follow a fixed template that points at one word of a
//! corpus document, so the simulated solver can recover the gold answer from
//! the index without shared state.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::policy::prompts::{self, field, HOP_PREFIX, QUESTION_PREFIX};
use crate::policy::{find_block, ChatEndpoint, ChatRequest, EndpointError, Role};
use crate::retrieval::Index;
use crate::seeds;
use crate::textkit::{is_valid_pair, normalize};

/// Reply of the simulated solver when it misses.
pub const WRONG_ANSWER: &str = "unknown";
const EVIDENCE_RADIUS: usize = 3;
const MIN_ANSWER_CHARS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimPolicy {
    /// Solve rate without evidence.
    pub p: f64,
    /// Solve rate when the prompt carries an evidence block.
    pub p_plus: f64,
}

impl Default for SimPolicy {
    fn default() -> Self {
        Self { p: 0.5, p_plus: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scenario {
    /// Direct answer on the first turn, no searches.
    AlwaysValidOneHop,
    /// h - 1 searches, then a valid triple.
    AlwaysValid,
    AnswerLeak,
    /// Final message without an evidence block.
    Malformed,
    /// Valid with the given probability, answer leak otherwise.
    Mixed(f64),
    /// Searches on every turn and never answers.
    ToolLoop,
}

impl FromStr for Scenario {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        let unknown = || SimError::UnknownScenario(s.to_owned());
        Ok(match s {
            "always-valid-1hop" => Scenario::AlwaysValidOneHop,
            "always-valid" => Scenario::AlwaysValid,
            "answer-leak" => Scenario::AnswerLeak,
            "malformed" => Scenario::Malformed,
            "tool-loop" => Scenario::ToolLoop,
            "mixed" => Scenario::Mixed(0.5),
            _ => {
                let rate: f64 = s
                    .strip_prefix("mixed:")
                    .and_then(|r| r.parse().ok())
                    .ok_or_else(unknown)?;
                if !(0.0..=1.0).contains(&rate) {
                    return Err(unknown());
                }
                Scenario::Mixed(rate)
            }
        })
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::AlwaysValidOneHop => f.write_str("always-valid-1hop"),
            Scenario::AlwaysValid => f.write_str("always-valid"),
            Scenario::AnswerLeak => f.write_str("answer-leak"),
            Scenario::Malformed => f.write_str("malformed"),
            Scenario::Mixed(r) => write!(f, "mixed:{r}"),
            Scenario::ToolLoop => f.write_str("tool-loop"),
        }
    }
}

impl TryFrom<String> for Scenario {
    type Error = SimError;
    fn try_from(s: String) -> Result<Self, SimError> {
        s.parse()
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.to_string()
    }
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeMode {
    AlwaysAccept,
    AlwaysReject,
    /// Accepts when the span contains the gold answer as a token run.
    ContainsGold,
    /// Replies with text the strict parser rejects.
    Garbage,
}

impl FromStr for JudgeMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "always-accept" => Ok(JudgeMode::AlwaysAccept),
            "always-reject" => Ok(JudgeMode::AlwaysReject),
            "contains-gold" => Ok(JudgeMode::ContainsGold),
            "garbage" => Ok(JudgeMode::Garbage),
            _ => Err(SimError::UnknownJudgeMode(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub scenario: Scenario,
    #[serde(flatten)]
    pub policy: SimPolicy,
    pub judge: JudgeMode,
    pub seed: u64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::AlwaysValid,
            policy: SimPolicy::default(),
            judge: JudgeMode::ContainsGold,
            seed: 0,
        }
    }
}

fn clean(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

fn question_for(doc_id: &str, position: usize) -> String {
    format!("What is word {} of the opening passage in document {doc_id}?", position + 1)
}

fn parse_question(q: &str) -> Option<(usize, &str)> {
    let rest = q.strip_prefix("What is word ")?;
    let (num, rest) = rest.split_once(' ')?;
    let id = rest.strip_prefix("of the opening passage in document ")?.strip_suffix('?')?;
    let n: usize = num.parse().ok()?;
    Some((n.checked_sub(1)?, id))
}

/// The triple the simulated proposer emits for word `position` of `text`,
/// or `None` when that word is not a usable answer.
pub fn mock_triple(doc_id: &str, text: &str, position: usize) -> Option<(String, String, String)> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let answer = clean(words.get(position)?);
    if answer.chars().count() < MIN_ANSWER_CHARS || normalize(answer).word_len() != 1 {
        return None;
    }
    let question = question_for(doc_id, position);
    if !is_valid_pair(&question, answer) {
        return None;
    }
    let lo = position.saturating_sub(EVIDENCE_RADIUS);
    let hi = (position + EVIDENCE_RADIUS + 1).min(words.len());
    Some((question, answer.to_owned(), words[lo..hi].join(" ")))
}

fn candidates(doc_id: &str, text: &str) -> Vec<usize> {
    (0..text.split_whitespace().count())
        .filter(|&i| mock_triple(doc_id, text, i).is_some())
        .collect()
}

/// Simulated proposer, solver, auxiliary scorer and judge behind one
/// endpoint.
pub struct MockEndpoint {
    config: MockConfig,
    index: Option<Arc<Index>>,
    answers: HashMap<String, (String, String)>,
    unseeded: AtomicU64,
}

impl MockEndpoint {
    pub fn new(config: MockConfig, index: Option<Arc<Index>>) -> Self {
        Self {
            config,
            index,
            answers: HashMap::new(),
            unseeded: AtomicU64::new(0),
        }
    }

    /// Registers gold (answer, evidence) pairs for questions that do not
    /// follow the generated template.
    pub fn with_answers<I>(mut self, rows: I) -> Self
    where
        I: IntoIterator<Item = (String, String, String)>,
    {
        for (q, a, e) in rows {
            self.answers.entry(q).or_insert((a, e));
        }
        self
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    fn gold(&self, question: &str) -> Option<(String, String)> {
        if let Some(hit) = self.answers.get(question) {
            return Some(hit.clone());
        }
        let (pos, id) = parse_question(question)?;
        let doc = self.index.as_ref()?.find(id)?;
        mock_triple(&doc.id, &doc.text, pos).map(|(_, a, e)| (a, e))
    }

    fn propose(&self, user: &str, turn: usize, rng: &mut ChaCha8Rng) -> String {
        let hop: usize = field(user, HOP_PREFIX).and_then(|h| h.parse().ok()).unwrap_or(1);
        let doc_id = field(user, prompts::DOC_ID_PREFIX).unwrap_or("");
        let text = find_block(user, "document").content.unwrap_or_default();
        let searches = match self.config.scenario {
            Scenario::AlwaysValidOneHop | Scenario::Malformed => 0,
            Scenario::ToolLoop => usize::MAX,
            _ => hop.saturating_sub(1),
        };
        if turn < searches {
            let query: Vec<&str> = text.split_whitespace().skip(turn * 4).take(4).collect();
            let query = if query.is_empty() { doc_id.to_owned() } else { query.join(" ") };
            return format!("<think>I need more context, step {}.</think>\n<search>{query}</search>", turn + 1);
        }
        let pool = candidates(doc_id, &text);
        if pool.is_empty() {
            return "<think>Nothing to ask.</think>".into();
        }
        let (question, answer, evidence) =
            mock_triple(doc_id, &text, pool[rng.random_range(0..pool.len())]).expect("candidate");
        let leak = match self.config.scenario {
            Scenario::AnswerLeak => true,
            Scenario::Mixed(rate) => rng.random::<f64>() >= rate,
            _ => false,
        };
        let question = if leak {
            format!("Is {answer} the word in question? {question}")
        } else {
            question
        };
        let tail = if self.config.scenario == Scenario::Malformed {
            String::new()
        } else {
            format!("\n<evidence>{evidence}</evidence>")
        };
        format!(
            "<think>Pick a word and cite its surroundings.</think>\n\
             <question>{question}</question>\n<answer>{answer}</answer>{tail}"
        )
    }

    fn solve(&self, user: &str, turn: usize, rng: &mut ChaCha8Rng) -> String {
        let question = field(user, QUESTION_PREFIX).unwrap_or("");
        if turn == 0 {
            return format!("<think>Search first.</think>\n<search>{question}</search>");
        }
        match self.gold(question) {
            Some((a, e)) if rng.random::<f64>() < self.config.policy.p => {
                format!("<think>Found it.</think>\n<answer>{a}</answer>\n<evidence>{e}</evidence>")
            }
            _ => format!("<think>Not sure.</think>\n<answer>{WRONG_ANSWER}</answer>\n<evidence></evidence>"),
        }
    }

    fn single_turn(&self, user: &str, rng: &mut ChaCha8Rng) -> String {
        let question = field(user, QUESTION_PREFIX).unwrap_or("");
        let rate = if find_block(user, "context").content.is_some() {
            self.config.policy.p_plus
        } else {
            self.config.policy.p
        };
        match self.gold(question) {
            Some((a, _)) if rng.random::<f64>() < rate => format!("<answer>{a}</answer>"),
            _ => format!("<answer>{WRONG_ANSWER}</answer>"),
        }
    }

    fn judge(&self, user: &str) -> String {
        let verdict = match self.config.judge {
            JudgeMode::AlwaysAccept => true,
            JudgeMode::AlwaysReject => false,
            JudgeMode::Garbage => return "The passage is somewhat relevant.".into(),
            JudgeMode::ContainsGold => {
                let gold = normalize(field(user, prompts::ANSWER_PREFIX).unwrap_or(""));
                let span = normalize(&find_block(user, "evidence").content.unwrap_or_default());
                !gold.is_empty() && span.contains_run(&gold)
            }
        };
        format!("<answer>{}</answer>", if verdict { "yes" } else { "no" })
    }
}

#[async_trait]
impl ChatEndpoint for MockEndpoint {
    async fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let system = request
            .messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let user = request
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .ok_or_else(|| EndpointError::Protocol("request has no user message".into()))?;
        let turn = request.messages.iter().filter(|m| m.role == Role::Assistant).count();
        let call = request
            .seed
            .unwrap_or_else(|| self.unseeded.fetch_add(1, Ordering::SeqCst));
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(
            self.config.seed,
            &[call, seeds::fnv1a(user.as_bytes())],
        ));

        if system.starts_with(prompts::PROPOSER_MARKER) {
            Ok(self.propose(user, turn, &mut rng))
        } else if system.starts_with(prompts::SOLVER_MARKER) {
            Ok(self.solve(user, turn, &mut rng))
        } else if system.starts_with(prompts::SINGLE_TURN_MARKER) {
            Ok(self.single_turn(user, &mut rng))
        } else if system.starts_with(prompts::JUDGE_MARKER) {
            Ok(self.judge(user))
        } else {
            Err(EndpointError::Protocol(format!(
                "unrecognized prompt: {}",
                system.chars().take(80).collect::<String>()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::prompts::single_turn_messages;
    use crate::policy::{ChatMessage, Sampling};

    #[test]
    fn scenario_ids() {
        for id in ["always-valid-1hop", "always-valid", "answer-leak", "malformed", "tool-loop", "mixed:0.6"] {
            assert_eq!(id.parse::<Scenario>().unwrap().to_string(), id);
        }
        assert_eq!("mixed".parse::<Scenario>().unwrap(), Scenario::Mixed(0.5));
        for bad in ["", "nope", "mixed:2", "mixed:x"] {
            assert!(matches!(bad.parse::<Scenario>(), Err(SimError::UnknownScenario(_))));
        }
    }

    #[test]
    fn template_round_trips() {
        let text = "Marie Curie discovered polonium and radium in Paris.";
        for i in candidates("d1", text) {
            let (q, a, e) = mock_triple("d1", text, i).unwrap();
            assert_eq!(parse_question(&q), Some((i, "d1")));
            assert!(is_valid_pair(&q, &a));
            assert!(crate::textkit::is_verbatim_span(&e, &[text]));
            assert!(normalize(&e).contains_run(&normalize(&a)));
        }
        assert_eq!(candidates("d1", text), [0, 1, 2, 3, 5, 7]);
    }

    #[tokio::test]
    async fn evidence_raises_solve_rate() {
        let cfg = MockConfig { policy: SimPolicy { p: 0.3, p_plus: 0.8 }, ..MockConfig::default() };
        let mock = MockEndpoint::new(cfg, None).with_answers([("q?".to_string(), "gold".to_string(), "ev".to_string())]);
        let trials = 40_000;
        let mut hits = [0usize; 2];
        for (slot, ev) in [(0, None), (1, Some("ev"))] {
            for s in 0..trials {
                let req = ChatRequest::new(single_turn_messages("q?", ev), Sampling::SINGLE_TURN).with_seed(s);
                if mock.complete(&req).await.unwrap().contains("gold") {
                    hits[slot] += 1;
                }
            }
        }
        assert!((hits[0] as f64 / trials as f64 - 0.3).abs() < 0.01, "{hits:?}");
        assert!((hits[1] as f64 / trials as f64 - 0.8).abs() < 0.01);
    }

    #[tokio::test]
    async fn unknown_prompt_is_a_protocol_error() {
        let mock = MockEndpoint::new(MockConfig::default(), None);
        let req = ChatRequest::new(vec![ChatMessage::new(Role::User, "hello")], Sampling::ROLLOUT);
        assert!(matches!(mock.complete(&req).await, Err(EndpointError::Protocol(_))));
    }
}
