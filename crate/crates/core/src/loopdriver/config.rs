//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LoopError;
use crate::policy::{ChatEndpoint, Gateway, HttpEndpoint, RetryPolicy, RolloutLimits, Sampling};
use crate::retrieval::{Index, RemoteSearch, SearchHandle};
use crate::reward::{Hop, RewardWeights};
use crate::selector::SelectorConfig;
use crate::simcheck::{MockConfig, MockEndpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EndpointConfig {
    /// The in-process simulated policy.
    Mock,
    Http {
        url: String,
        model: String,
        /// Name of the environment variable holding the API key.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Endpoints {
    pub proposer: EndpointConfig,
    pub solver: EndpointConfig,
    /// Defaults to the solver endpoint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auxiliary: Option<EndpointConfig>,
    pub judge: EndpointConfig,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            proposer: EndpointConfig::Mock,
            solver: EndpointConfig::Mock,
            auxiliary: None,
            judge: EndpointConfig::Mock,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub rollout: Sampling,
    pub single_turn: Sampling,
    pub eval: Sampling,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            rollout: Sampling::ROLLOUT,
            single_turn: Sampling::SINGLE_TURN,
            eval: Sampling::GREEDY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Line-delimited corpus; used when no index file is given.
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    /// Remote search server; overrides the local index for searches.
    pub search_url: Option<String>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Records per iteration.
    pub batch_size: usize,
    pub steps: u64,
    /// Rollouts per question in solver training.
    pub group_size: usize,
    /// Relative weights of hop counts 1 to 4.
    pub hop_pmf: [f64; 4],
    pub delta0: f64,
    pub parallelism: usize,
    /// Proposer samples per prompt during dataset generation.
    pub samples_per_prompt: usize,
    pub weights: RewardWeights,
    pub selector: SelectorConfig,
    pub limits: RolloutLimits,
    pub retry: RetryPolicy,
    pub sampling: SamplingConfig,
    pub endpoints: Endpoints,
    pub mock: MockConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 256,
            steps: 50,
            group_size: 5,
            hop_pmf: [4.0, 3.0, 2.0, 1.0],
            delta0: crate::advantage::DEFAULT_DELTA0,
            parallelism: 16,
            samples_per_prompt: 5,
            weights: RewardWeights::default(),
            selector: SelectorConfig::default(),
            limits: RolloutLimits::default(),
            retry: RetryPolicy::default(),
            sampling: SamplingConfig::default(),
            endpoints: Endpoints::default(),
            mock: MockConfig::default(),
            paths: Paths {
                output: PathBuf::from("out"),
                ..Paths::default()
            },
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, LoopError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| LoopError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, LoopError> {
        let text = std::fs::read_to_string(path).map_err(|e| LoopError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        let bad = |m: &str| Err(LoopError::Config(m.to_owned()));
        if self.hop_pmf.iter().any(|w| !w.is_finite() || *w < 0.0) || self.hop_pmf.iter().sum::<f64>() <= 0.0 {
            return bad("hop_pmf needs non-negative weights with a positive sum");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.group_size < 2 || self.weights.n_solver_trials < 2 {
            return bad("group_size and weights.n_solver_trials must be at least 2");
        }
        if self.weights.m_verifier_samples == 0 {
            return bad("weights.m_verifier_samples must be positive");
        }
        if self.weights.l_max == 0 {
            return bad("weights.l_max must be positive");
        }
        if self.delta0.is_nan() || self.delta0 <= 0.0 {
            return bad("delta0 must be positive");
        }
        if self.limits.max_assistant_turns == 0 {
            return bad("limits.max_assistant_turns must be positive");
        }
        if self.samples_per_prompt == 0 {
            return bad("samples_per_prompt must be positive");
        }
        Ok(())
    }

    /// Hop probabilities, normalized to sum to one.
    pub fn hop_probabilities(&self) -> [(Hop, f64); 4] {
        let total: f64 = self.hop_pmf.iter().sum();
        let mut out = [(Hop::ALL[0], 0.0); 4];
        for (slot, (hop, w)) in out.iter_mut().zip(Hop::ALL.iter().zip(self.hop_pmf)) {
            *slot = (*hop, w / total);
        }
        out
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }

    pub fn load_index(&self) -> Result<Index, LoopError> {
        match (&self.paths.index, &self.paths.corpus) {
            (Some(p), _) => Ok(Index::load(p)?),
            (None, Some(c)) => Ok(crate::retrieval::ingest(c)?),
            (None, None) => Err(LoopError::Config("set paths.index or paths.corpus".into())),
        }
    }
}

fn build_endpoint(cfg: &EndpointConfig, mock: &Arc<MockEndpoint>) -> Result<Arc<dyn ChatEndpoint>, LoopError> {
    Ok(match cfg {
        EndpointConfig::Mock => mock.clone(),
        EndpointConfig::Http { url, model, api_key_env } => {
            let key = match api_key_env {
                None => None,
                Some(var) => Some(std::env::var(var).map_err(|_| LoopError::MissingSecret(var.clone()))?),
            };
            Arc::new(HttpEndpoint::new(url.clone(), model.clone()).with_api_key(key))
        }
    })
}

/// Everything an iteration needs: configuration, corpus, search and models.
#[derive(Clone)]
pub struct Runtime {
    pub config: RunConfig,
    pub index: Arc<Index>,
    pub search: SearchHandle,
    pub gateway: Gateway,
}

impl Runtime {
    /// `answers` preloads the simulated solver with gold rows for questions
    /// that do not come from the simulated proposer.
    pub fn build<I>(config: RunConfig, index: Arc<Index>, answers: I) -> Result<Self, LoopError>
    where
        I: IntoIterator<Item = (String, String, String)>,
    {
        config.validate()?;
        let mock = Arc::new(MockEndpoint::new(config.mock, Some(index.clone())).with_answers(answers));
        let e = &config.endpoints;
        let solver = build_endpoint(&e.solver, &mock)?;
        let mut gateway = Gateway::new(
            build_endpoint(&e.proposer, &mock)?,
            solver,
            build_endpoint(&e.judge, &mock)?,
            config.parallelism,
        )
        .with_retry(config.retry);
        if let Some(aux) = &e.auxiliary {
            gateway = gateway.with_auxiliary(build_endpoint(aux, &mock)?);
        }
        let search = match &config.paths.search_url {
            Some(url) => SearchHandle::new(Arc::new(RemoteSearch::new(url.clone()))),
            None => SearchHandle::local(index.clone()),
        };
        Ok(Self {
            config,
            index,
            search,
            gateway,
        })
    }
}
