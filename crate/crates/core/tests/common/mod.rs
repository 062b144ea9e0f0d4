#![allow(dead_code)]

use std::sync::Arc;

use verispan_core::loopdriver::{RunConfig, Runtime};
use verispan_core::retrieval::{CorpusDocument, Index};
use verispan_core::simcheck::{MockConfig, Scenario};

const DOCS: &[(&str, &str, &str)] = &[
    ("d01", "Danube", "The Danube rises in the Black Forest and flows east through Vienna, Bratislava, Budapest and Belgrade before reaching the Black Sea."),
    ("d02", "Eiffel Tower", "Gustave Eiffel's company designed and built the wrought-iron tower for the 1889 World's Fair in Paris."),
    ("d03", "Marie Curie", "Marie Curie shared the 1903 Nobel Prize in Physics and won the 1911 Nobel Prize in Chemistry for discovering polonium and radium."),
    ("d04", "Kilimanjaro", "Kilimanjaro is a dormant volcano in Tanzania with three volcanic cones named Kibo, Mawenzi and Shira."),
    ("d05", "Penicillin", "Alexander Fleming noticed in 1928 that a mould called Penicillium killed surrounding bacteria in a culture plate."),
    ("d06", "Great Barrier Reef", "The Great Barrier Reef stretches along the coast of Queensland and is built by billions of tiny coral polyps."),
    ("d07", "Ada Lovelace", "Ada Lovelace wrote notes on Charles Babbage's Analytical Engine that include an algorithm for computing Bernoulli numbers."),
    ("d08", "Amazon River", "The Amazon carries more water than any other river and drains a basin covering much of northern Brazil."),
    ("d09", "Mount Everest", "Tenzing Norgay and Edmund Hillary reached the summit of Everest on 29 May 1953 by the southeast ridge."),
    ("d10", "Printing press", "Johannes Gutenberg introduced movable metal type in Mainz around 1440, which spread printing across Europe."),
    ("d11", "Photosynthesis", "Plants capture sunlight with chlorophyll and convert carbon dioxide and water into glucose and oxygen."),
    ("d12", "Sahara", "The Sahara is the largest hot desert and covers large parts of Algeria, Chad, Egypt, Libya, Mali and Niger."),
];

pub fn documents() -> Vec<CorpusDocument> {
    DOCS.iter()
        .map(|(id, title, text)| CorpusDocument { id: (*id).into(), title: (*title).into(), text: (*text).into() })
        .collect()
}

pub fn index() -> Arc<Index> {
    Arc::new(Index::from_documents(documents()).unwrap())
}

pub fn config(scenario: Scenario, batch: usize, seed: u64) -> RunConfig {
    RunConfig {
        seed,
        batch_size: batch,
        steps: 1,
        parallelism: 8,
        mock: MockConfig { scenario, seed, ..MockConfig::default() },
        ..RunConfig::default()
    }
}

pub fn runtime(config: RunConfig) -> Runtime {
    Runtime::build(config, index(), std::iter::empty()).unwrap()
}

/// Hand-labeled evaluation rows: (question, gold answer, predicted answer,
/// predicted evidence, em, judge accepts under the contains-gold rule).
pub const EVAL_FIXTURE: &[(&str, &str, &str, &str, bool, bool)] = &[
    ("Where was the tower built?", "Paris", "Paris", "built the wrought-iron tower for the 1889 World's Fair in Paris", true, true),
    ("Which capital does the Danube reach first?", "Vienna", "vienna.", "flows east through Vienna", true, true),
    ("When was the fair held?", "1889", "1889", "", true, false),
    ("Who shared the 1903 prize?", "Marie Curie", "Curie", "Marie Curie shared the 1903 Nobel Prize", false, true),
    ("Where is Kilimanjaro?", "Tanzania", "Kenya", "a dormant volcano in Kenya", false, false),
    ("Which river carries the most water?", "the Amazon", "Amazon", "The Amazon carries more water", true, true),
    ("Who noticed the mould?", "Fleming", "Fleming", "a mould called Penicillium killed surrounding bacteria", true, false),
    ("What did the algorithm compute?", "Bernoulli numbers", "Bernoulli numbers", "an algorithm for computing Bernoulli numbers", true, true),
    ("Where did movable type appear?", "Mainz", "Gutenberg", "Johannes Gutenberg introduced movable metal type in Mainz", false, true),
    ("What pigment captures sunlight?", "chlorophyll", "sunlight", "Plants capture sunlight with chlorophyll", false, true),
];

pub fn eval_rows() -> Vec<verispan_core::dataset::DatasetRow> {
    EVAL_FIXTURE
        .iter()
        .map(|(q, gold, ..)| verispan_core::dataset::DatasetRow::new(*q, *gold, ""))
        .collect()
}

/// Predictions the simulated solver will emit for the fixture questions.
pub fn eval_predictions() -> Vec<(String, String, String)> {
    EVAL_FIXTURE
        .iter()
        .map(|(q, _, pred, ev, ..)| ((*q).into(), (*pred).into(), (*ev).into()))
        .collect()
}
