//! Online phase: requirement → units → ordered candidates → relevance
//! cutoff → distribution-matched proxy subset.

mod cutoff;
mod kmeans;
mod ordering;
mod scoring;
mod subset;
mod voting;
mod wasserstein;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{lookup_candidates, CorpusInstance, TagIndex};
use crate::oracles::{
    judge_relevance, EmbeddingProvider, LikelihoodProvider, Oracle, OracleEnsemble, PromptLibrary,
};
use crate::units::UnitSet;
use crate::{Error, Result};

pub use cutoff::{binary_search_cutoff, greedy_topk, CutoffError, CutoffOutcome, GreedyOutcome, Probe};
pub use kmeans::{kmeans, Clustering};
pub use ordering::{candidate_order, order_candidates, Candidate};
pub use scoring::{
    flesch_reading_ease, hardness_from_logprobs, hardness_score, quality_score, score_candidates,
    BigramModel, ScoredCandidate,
};
pub use subset::{select_indices, select_proxy_subset, subset_objective, ProxySubset, SubsetChoice, SubsetOptions};
pub use voting::{consensus_ranks, resolve_units, voting_candidates, RankedUnit, RankerRecord, ResolvedRequirement};
pub use wasserstein::wasserstein_1d;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Requirement {
    pub requirement_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl Requirement {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Requirement {
            requirement_id: id.into(),
            text: text.into(),
            description: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Validation("requirement text is empty".into()));
        }
        Ok(())
    }

    /// Long-form description for the voting prompt.
    pub fn description_or_text(&self) -> &str {
        self.description.as_deref().unwrap_or(&self.text)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    BinarySearch,
    Greedy,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::BinarySearch => "binary_search",
            Strategy::Greedy => "greedy",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary_search" | "binary-search" => Ok(Strategy::BinarySearch),
            "greedy" => Ok(Strategy::Greedy),
            other => Err(Error::Validation(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Shared inputs of an online run.
pub struct OnlineContext<'a> {
    pub units: &'a UnitSet,
    pub index: &'a TagIndex,
    pub corpus: &'a BTreeMap<String, CorpusInstance>,
    pub frequencies: &'a BTreeMap<String, usize>,
    pub rankers: &'a [Arc<dyn Oracle>],
    pub judges: &'a OracleEnsemble,
    pub prompts: &'a PromptLibrary,
    pub likelihood: Option<&'a dyn LikelihoodProvider>,
    pub embedder: &'a dyn EmbeddingProvider,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineOptions {
    pub k1: usize,
    pub subset: SubsetOptions,
    pub strategy: Strategy,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        OnlineOptions {
            k1: 10,
            subset: SubsetOptions::default(),
            strategy: Strategy::BinarySearch,
        }
    }
}

/// Everything an online run produced. `subset` is `None` when nothing
/// survived the relevance stage.
#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub resolved: ResolvedRequirement,
    pub candidates: usize,
    pub cutoff: Option<CutoffOutcome>,
    pub greedy: Option<GreedyOutcome>,
    pub pool: usize,
    pub subset: Option<ProxySubset>,
}

pub fn run_online(ctx: &OnlineContext<'_>, req: &Requirement, opts: &OnlineOptions) -> Result<OnlineRun> {
    req.validate()?;
    let resolved = resolve_units(req, ctx.units, ctx.frequencies, ctx.rankers, &ctx.prompts.voting, opts.k1)
        .map_err(|e| e.in_stage("resolve_units"))?;
    log::info!("selected {} unit(s): {:?}", resolved.selected.len(), resolved.selected);
    let ids = lookup_candidates(ctx.index, &resolved.selected_set());
    let list = order_candidates(&ids, ctx.index, ctx.corpus, &resolved).map_err(|e| e.in_stage("order_candidates"))?;
    log::info!("{} candidate instance(s)", list.len());
    let mut run = OnlineRun {
        resolved,
        candidates: list.len(),
        cutoff: None,
        greedy: None,
        pool: 0,
        subset: None,
    };
    if list.is_empty() {
        return Ok(run);
    }
    let judge = |i: usize| {
        judge_relevance(ctx.judges, &ctx.prompts.relevance, &req.text, req.description_or_text(), &list[i].instance)
    };
    let members = ctx.judges.len();
    let pool: Vec<Candidate> = match opts.strategy {
        Strategy::BinarySearch => {
            let out = binary_search_cutoff(list.len(), members, judge)
                .map_err(|e| Error::from(e).in_stage("binary_search_cutoff"))?;
            let pool = list[..out.prefix_len].to_vec();
            run.cutoff = Some(out);
            pool
        }
        Strategy::Greedy => {
            let out = greedy_topk(list.len(), members, opts.subset.k2, judge)
                .map_err(|e| Error::from(e).in_stage("greedy_topk"))?;
            let pool = out.kept.iter().map(|&i| list[i].clone()).collect();
            run.greedy = Some(out);
            pool
        }
    };
    run.pool = pool.len();
    log::info!("{} instance(s) after the relevance stage", run.pool);
    if pool.is_empty() {
        return Ok(run);
    }
    let scored = score_candidates(pool, ctx.likelihood, ctx.embedder).map_err(|e| e.in_stage("scoring"))?;
    let subset = match opts.strategy {
        Strategy::BinarySearch => {
            select_proxy_subset(&scored, &opts.subset).map_err(|e| e.in_stage("select_proxy_subset"))?
        }
        Strategy::Greedy => ProxySubset {
            members: scored,
            objective: 0.0,
            candidate_trials: 0,
            best_trial: None,
            trial_objectives: vec![],
        },
    };
    run.subset = Some(subset);
    Ok(run)
}

/// Replayable record of an online run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub requirement: Requirement,
    pub strategy: Strategy,
    pub config: serde_json::Value,
    pub ranked_units: Vec<RankedUnit>,
    pub selected_units: Vec<String>,
    pub rankings: Vec<RankerRecord>,
    pub candidates: usize,
    pub probes: Vec<Probe>,
    pub cutoff_index: Option<usize>,
    pub judge_calls: usize,
    pub non_monotone: bool,
    pub pool: usize,
    pub subset_size: usize,
    pub subset_objective: Option<f64>,
    pub best_trial: Option<usize>,
    pub trial_objectives: Vec<f64>,
    pub surrogate_hardness: usize,
    pub subset_ids: Vec<String>,
    #[serde(default)]
    pub benchmark: Option<serde_json::Value>,
}

impl OnlineRun {
    pub fn manifest(&self, strategy: Strategy, config: serde_json::Value) -> RunManifest {
        let (probes, cutoff_index, judge_calls, non_monotone) = match (&self.cutoff, &self.greedy) {
            (Some(c), _) => (c.probes.clone(), c.cutoff, c.judge_calls, c.non_monotone),
            (None, Some(g)) => (g.probes.clone(), g.kept.last().copied(), g.judge_calls, false),
            _ => (vec![], None, 0, false),
        };
        let members = self.subset.as_ref().map(|s| s.members.as_slice()).unwrap_or(&[]);
        RunManifest {
            requirement: self.resolved.requirement.clone(),
            strategy,
            config,
            ranked_units: self.resolved.ranked_units.clone(),
            selected_units: self.resolved.selected.clone(),
            rankings: self.resolved.per_model_rankings.clone(),
            candidates: self.candidates,
            probes,
            cutoff_index,
            judge_calls,
            non_monotone,
            pool: self.pool,
            subset_size: members.len(),
            subset_objective: self.subset.as_ref().map(|s| s.objective),
            best_trial: self.subset.as_ref().and_then(|s| s.best_trial),
            trial_objectives: self.subset.as_ref().map(|s| s.trial_objectives.clone()).unwrap_or_default(),
            surrogate_hardness: members.iter().filter(|m| m.hardness_surrogate).count(),
            subset_ids: members.iter().map(|m| m.candidate.instance.instance_id.clone()).collect(),
            benchmark: None,
        }
    }
}
