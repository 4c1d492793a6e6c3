//! Model-backed judgments behind one request/response interface.
//!
//! Every model-dependent step (granularity classification, unit ranking,
//! relevance judging, query and MCQ generation, token likelihoods,
//! embeddings, models under test) goes through an [`Oracle`] or one of the
//! provider traits. Each has a deterministic scripted implementation driven
//! by fixture files and an HTTP implementation for OpenAI-compatible servers.

mod http;
mod prompts;
mod providers;
mod roles;
mod scripted;

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpConfig, HttpEmbedding, HttpLikelihood, HttpOracle};
pub use prompts::{PromptLibrary, PromptTemplate, PERSONAS};
pub use providers::{
    EmbeddingProvider, FixtureEmbedding, FixtureLikelihood, FnLikelihood, HashedTrigramEmbedder,
    LikelihoodProvider,
};
pub use roles::{
    classify_granularity, judge_relevance, parse_granularity, parse_ranked_list, parse_verdict,
    rank_units, GranularityLabel, RankCandidate, Ranking, Verdict, RANK_CAP,
};
pub use scripted::{escape_reply, unescape_reply, ScriptedOracle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{oracle}: no fixture for prompt hash {hash}")]
    FixtureMiss { oracle: String, hash: String },

    #[error("{oracle}: transport error after {attempts} attempt(s): {message}")]
    Transport {
        oracle: String,
        attempts: u32,
        message: String,
    },

    #[error("{oracle}: unparseable {role} reply: {reply:?}")]
    Unparseable {
        oracle: String,
        role: &'static str,
        reply: String,
    },

    #[error("prompt template error: {0}")]
    Template(String),

    #[error("{oracle}: {message}")]
    Failed { oracle: String, message: String },
}

/// A rendered two-part chat prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn user(text: impl Into<String>) -> Self {
        Prompt {
            system: String::new(),
            user: text.into(),
        }
    }

    /// Fixture key: the first 16 bytes of SHA-256 over
    /// `system + "\u{1f}" + user`, as lowercase hex.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        h.update([0x1f]);
        h.update(self.user.as_bytes());
        h.finalize()[..16]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Text that scripted regex routes are matched against.
    pub fn joined(&self) -> String {
        format!("{}\n{}", self.system, self.user)
    }
}

pub trait Oracle: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &Prompt) -> Result<String, OracleError>;
}

impl fmt::Debug for dyn Oracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Oracle({})", self.name())
    }
}

/// Oracle backed by a closure; used for in-process scripting.
pub struct FnOracle<F> {
    name: String,
    f: F,
}

impl<F> FnOracle<F>
where
    F: Fn(&Prompt) -> Result<String, OracleError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnOracle {
            name: name.into(),
            f,
        }
    }
}

impl<F> Oracle for FnOracle<F>
where
    F: Fn(&Prompt) -> Result<String, OracleError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, OracleError> {
        (self.f)(prompt)
    }
}

/// Ordered voting members.
#[derive(Clone)]
pub struct OracleEnsemble {
    pub ensemble_name: String,
    members: Vec<Arc<dyn Oracle>>,
}

impl OracleEnsemble {
    pub fn new(
        ensemble_name: impl Into<String>,
        members: Vec<Arc<dyn Oracle>>,
    ) -> crate::Result<Self> {
        let ensemble_name = ensemble_name.into();
        if members.is_empty() {
            return Err(crate::Error::Validation(format!(
                "ensemble {ensemble_name} has no members"
            )));
        }
        Ok(OracleEnsemble {
            ensemble_name,
            members,
        })
    }

    pub fn members(&self) -> &[Arc<dyn Oracle>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Smallest vote count that is a strict majority.
    pub fn majority_threshold(&self) -> usize {
        self.members.len() / 2 + 1
    }
}

impl fmt::Debug for OracleEnsemble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OracleEnsemble")
            .field("ensemble_name", &self.ensemble_name)
            .field(
                "members",
                &self.members.iter().map(|m| m.name()).collect::<Vec<_>>(),
            )
            .finish()
    }
}

/// Counting semaphore bounding concurrent remote requests.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a>(&'a InFlightLimit);

impl InFlightLimit {
    pub fn new(max: usize) -> Arc<Self> {
        Arc::new(InFlightLimit {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        })
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.max {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        InFlightPermit(self)
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}
