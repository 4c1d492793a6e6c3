use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Requirement;
use crate::oracles::{rank_units, Oracle, OracleError, PromptTemplate, RankCandidate, RANK_CAP};
use crate::units::UnitSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedUnit {
    pub unit_id: String,
    pub consensus_rank: f64,
}

/// What one ranker returned. A failed ranker has `error` set and no ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerRecord {
    pub ranker: String,
    pub unit_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRequirement {
    pub requirement: Requirement,
    /// Units listed by at least one ranker, by consensus rank then id.
    pub ranked_units: Vec<RankedUnit>,
    pub selected: Vec<String>,
    pub per_model_rankings: Vec<RankerRecord>,
}

impl ResolvedRequirement {
    pub fn rank_of(&self, unit_id: &str) -> Option<f64> {
        self.ranked_units
            .iter()
            .find(|r| r.unit_id == unit_id)
            .map(|r| r.consensus_rank)
    }

    pub fn selected_set(&self) -> BTreeSet<String> {
        self.selected.iter().cloned().collect()
    }
}

/// Scientific units ordered by ascending corpus frequency, then id.
pub fn voting_candidates(units: &UnitSet, frequencies: &BTreeMap<String, usize>) -> Vec<RankCandidate> {
    let mut cands: Vec<(usize, RankCandidate)> = units
        .scientific()
        .map(|u| {
            (
                frequencies.get(&u.unit_id).copied().unwrap_or(0),
                RankCandidate {
                    unit_id: u.unit_id.clone(),
                    label: u.name.clone(),
                },
            )
        })
        .collect();
    cands.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.unit_id.cmp(&b.1.unit_id)));
    cands.into_iter().map(|(_, c)| c).collect()
}

/// Mean rank per unit across rankings; a unit missing from a ranking
/// (or any unit, for a failed ranker) counts as `RANK_CAP + 1`.
pub fn consensus_ranks(records: &[RankerRecord]) -> Vec<RankedUnit> {
    let listed: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.unit_ids.iter().map(String::as_str))
        .collect();
    let positions: Vec<BTreeMap<&str, usize>> = records
        .iter()
        .map(|r| {
            r.unit_ids
                .iter()
                .enumerate()
                .map(|(i, u)| (u.as_str(), i + 1))
                .collect()
        })
        .collect();
    let mut ranked: Vec<RankedUnit> = listed
        .into_iter()
        .map(|u| {
            let total: usize = positions
                .iter()
                .map(|p| p.get(u).copied().unwrap_or(RANK_CAP + 1))
                .sum();
            RankedUnit {
                unit_id: u.to_string(),
                consensus_rank: total as f64 / records.len() as f64,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.consensus_rank
            .total_cmp(&b.consensus_rank)
            .then_with(|| a.unit_id.cmp(&b.unit_id))
    });
    ranked
}

/// Asks every ranker to order the candidate units and keeps the `k1` with
/// the lowest mean rank.
pub fn resolve_units(
    requirement: &Requirement,
    units: &UnitSet,
    frequencies: &BTreeMap<String, usize>,
    rankers: &[Arc<dyn Oracle>],
    template: &PromptTemplate,
    k1: usize,
) -> Result<ResolvedRequirement> {
    if rankers.is_empty() {
        return Err(Error::Validation("at least one ranker is required".into()));
    }
    if k1 == 0 {
        return Err(Error::Validation("k1 must be at least 1".into()));
    }
    let candidates = voting_candidates(units, frequencies);
    if candidates.is_empty() {
        return Err(Error::Empty("no scientific units to rank".into()));
    }
    let description = requirement.description_or_text();
    let records: Vec<RankerRecord> = rankers
        .par_iter()
        .map(|r| match rank_units(r.as_ref(), template, &requirement.text, description, &candidates) {
            Ok(ranking) => RankerRecord {
                ranker: r.name().to_string(),
                unit_ids: ranking.unit_ids,
                error: None,
            },
            Err(e) => {
                log::warn!("ranker {} failed, all units get rank {}: {e}", r.name(), RANK_CAP + 1);
                RankerRecord {
                    ranker: r.name().to_string(),
                    unit_ids: vec![],
                    error: Some(e.to_string()),
                }
            }
        })
        .collect();
    if records.iter().all(|r| r.error.is_some()) {
        let msg = records
            .iter()
            .filter_map(|r| r.error.as_deref())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(OracleError::Failed {
            oracle: "rankers".into(),
            message: format!("every ranker failed: {msg}"),
        }
        .into());
    }
    let ranked_units = consensus_ranks(&records);
    let selected = ranked_units.iter().take(k1).map(|r| r.unit_id.clone()).collect();
    Ok(ResolvedRequirement {
        requirement: requirement.clone(),
        ranked_units,
        selected,
        per_model_rankings: records,
    })
}
