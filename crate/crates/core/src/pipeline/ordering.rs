use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ResolvedRequirement;
use crate::corpus::{CorpusInstance, TagIndex};
use crate::{Error, Result};

/// A candidate instance with its overlap against the selected units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub instance: CorpusInstance,
    pub matching_units: BTreeSet<String>,
    pub intersection_size: usize,
    pub avg_rank: f64,
}

/// More shared units first, then lower mean unit rank, then instance id.
pub fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.intersection_size
        .cmp(&a.intersection_size)
        .then_with(|| a.avg_rank.total_cmp(&b.avg_rank))
        .then_with(|| a.instance.instance_id.cmp(&b.instance.instance_id))
}

/// Builds and sorts the candidate list for `candidate_ids`.
pub fn order_candidates(
    candidate_ids: &BTreeSet<String>,
    index: &TagIndex,
    corpus: &BTreeMap<String, CorpusInstance>,
    resolved: &ResolvedRequirement,
) -> Result<Vec<Candidate>> {
    let selected = resolved.selected_set();
    let mut out = Vec::with_capacity(candidate_ids.len());
    for id in candidate_ids {
        let instance = corpus.get(id).ok_or_else(|| Error::Unknown {
            kind: "instance",
            id: id.clone(),
        })?;
        let units = index.units_of(id).ok_or_else(|| Error::Unknown {
            kind: "indexed instance",
            id: id.clone(),
        })?;
        let matching_units: BTreeSet<String> = units.intersection(&selected).cloned().collect();
        if matching_units.is_empty() {
            log::warn!("candidate {id} shares no selected unit; skipped");
            continue;
        }
        let ranks: Vec<f64> = matching_units
            .iter()
            .map(|u| resolved.rank_of(u).expect("selected units are ranked"))
            .collect();
        out.push(Candidate {
            instance: instance.clone(),
            intersection_size: matching_units.len(),
            avg_rank: ranks.iter().sum::<f64>() / ranks.len() as f64,
            matching_units,
        });
    }
    out.sort_by(candidate_order);
    Ok(out)
}
