//! Reward computation, curriculum selection and rollout orchestration for
//! self-evolving search agents whose generated questions carry a verbatim
//! evidence span.

pub mod advantage;
pub mod dataset;
pub mod eval;
pub mod jsonl;
pub mod loopdriver;
pub mod policy;
pub mod retrieval;
pub mod reward;
pub mod seeds;
pub mod selector;
pub mod simcheck;
pub mod textkit;
