use serde::{Deserialize, Serialize};

use crate::oracles::{OracleError, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub index: usize,
    pub votes: usize,
    pub members: usize,
    pub relevant: bool,
    pub failures: usize,
}

impl Probe {
    fn from_verdict(index: usize, v: &Verdict) -> Self {
        Probe {
            index,
            votes: v.votes,
            members: v.members,
            relevant: v.relevant,
            failures: v.failures.len(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutoffOutcome {
    /// Number of leading list elements kept.
    pub prefix_len: usize,
    /// Last index judged relevant, if any.
    pub cutoff: Option<usize>,
    pub probes: Vec<Probe>,
    pub judge_calls: usize,
    /// Some earlier-positioned probe drew fewer votes than a later one.
    pub non_monotone: bool,
}

/// A judge failure together with the probes completed before it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("relevance judging failed after {} probe(s): {source}", partial.probes.len())]
pub struct CutoffError {
    pub source: OracleError,
    pub partial: CutoffOutcome,
}

impl From<CutoffError> for crate::Error {
    fn from(e: CutoffError) -> Self {
        crate::Error::Oracle(e.source)
    }
}

fn vote_trend_broken(probes: &[Probe]) -> bool {
    let mut by_index: Vec<&Probe> = probes.iter().collect();
    by_index.sort_by_key(|p| p.index);
    by_index
        .iter()
        .enumerate()
        .any(|(i, p)| by_index[i + 1..].iter().any(|q| p.votes < q.votes))
}

/// Binary search for the last relevant position of a list of length `len`.
///
/// `judge(i)` polls the ensemble on element `i`. The kept prefix runs
/// through the last relevant probe, inclusive; it is empty when no probe
/// was relevant.
pub fn binary_search_cutoff<F>(len: usize, members: usize, mut judge: F) -> Result<CutoffOutcome, CutoffError>
where
    F: FnMut(usize) -> Result<Verdict, OracleError>,
{
    let mut out = CutoffOutcome::default();
    if len == 0 {
        return Ok(out);
    }
    let (mut low, mut high) = (0isize, len as isize - 1);
    while low <= high {
        let mid = low + (high - low) / 2;
        let verdict = match judge(mid as usize) {
            Ok(v) => v,
            Err(source) => {
                out.non_monotone = vote_trend_broken(&out.probes);
                return Err(CutoffError { source, partial: out });
            }
        };
        out.judge_calls += members;
        out.probes.push(Probe::from_verdict(mid as usize, &verdict));
        if verdict.relevant {
            out.cutoff = Some(mid as usize);
            low = mid + 1;
        } else {
            high = mid - 1;
        }
    }
    out.prefix_len = out.cutoff.map_or(0, |c| c + 1);
    out.non_monotone = vote_trend_broken(&out.probes);
    if out.non_monotone {
        log::warn!("relevance votes are not monotone along the candidate list");
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreedyOutcome {
    pub kept: Vec<usize>,
    pub probes: Vec<Probe>,
    pub judge_calls: usize,
}

/// Scans from the front, keeping majority-relevant elements until `k2`.
pub fn greedy_topk<F>(len: usize, members: usize, k2: usize, mut judge: F) -> Result<GreedyOutcome, OracleError>
where
    F: FnMut(usize) -> Result<Verdict, OracleError>,
{
    let mut out = GreedyOutcome::default();
    for i in 0..len {
        if out.kept.len() >= k2 {
            break;
        }
        let v = judge(i)?;
        out.judge_calls += members;
        out.probes.push(Probe::from_verdict(i, &v));
        if v.relevant {
            out.kept.push(i);
        }
    }
    Ok(out)
}
