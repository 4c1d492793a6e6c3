//! Typed oracle roles: rendering the right template and parsing replies.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;

use super::{Oracle, OracleEnsemble, OracleError, PromptTemplate};
use crate::corpus::CorpusInstance;

/// Rankers return at most this many units.
pub const RANK_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GranularityLabel {
    Coarse,
    Moderate,
    Fine,
}

static LABEL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:output\s*:\s*)?\(\s*(moderate|too\s+coarse|too\s+fine|coarse|fine)\s*\)")
        .unwrap()
});

/// Reads the leading parenthesized label: `(moderate)`, `(too coarse)`,
/// `(too fine)`.
pub fn parse_granularity(reply: &str) -> Option<GranularityLabel> {
    let caps = LABEL_RE.captures(reply)?;
    let label = caps[1].to_ascii_lowercase();
    Some(if label == "moderate" {
        GranularityLabel::Moderate
    } else if label.ends_with("coarse") {
        GranularityLabel::Coarse
    } else {
        GranularityLabel::Fine
    })
}

/// Asks for a label, re-asking up to `attempts` times while the reply does
/// not parse.
pub fn classify_granularity(
    oracle: &dyn Oracle,
    template: &PromptTemplate,
    term: &str,
    attempts: u32,
) -> Result<GranularityLabel, OracleError> {
    let prompt = template.render(&[("term", term)])?;
    let mut last = String::new();
    for _ in 0..attempts.max(1) {
        last = oracle.complete(&prompt)?;
        if let Some(label) = parse_granularity(&last) {
            return Ok(label);
        }
    }
    Err(OracleError::Unparseable {
        oracle: oracle.name().to_string(),
        role: "granularity",
        reply: last,
    })
}

/// A unit offered to a ranker under a display label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankCandidate {
    pub unit_id: String,
    pub label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    /// Most relevant first, deduplicated, at most [`RANK_CAP`].
    pub unit_ids: Vec<String>,
    /// Reply entries that matched no candidate.
    pub dropped: Vec<String>,
}

static ITEM_PREFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:\d+\s*[.)]|[-*•])\s*").unwrap());

fn normalize_item(s: &str) -> String {
    let s = ITEM_PREFIX.replace(s, "");
    let s = s
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '[' | ']' | '“' | '”'))
        .trim_end_matches('.')
        .trim();
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Maps a free-text ranked list onto candidate ids.
///
/// Entries may be separated by newlines or semicolons; within an entry that
/// is not itself a label, comma-separated pieces are matched greedily
/// (longest run first), so labels containing commas still resolve.
pub fn parse_ranked_list(reply: &str, candidates: &[RankCandidate]) -> Ranking {
    let mut lookup: HashMap<String, &str> = HashMap::new();
    for c in candidates {
        lookup.entry(normalize_item(&c.unit_id)).or_insert(&c.unit_id);
    }
    for c in candidates {
        lookup.insert(normalize_item(&c.label), &c.unit_id);
    }

    let mut ranking = Ranking::default();
    let mut seen = HashSet::new();
    let mut accept = |id: &str, ranking: &mut Ranking| {
        if ranking.unit_ids.len() < RANK_CAP && seen.insert(id.to_string()) {
            ranking.unit_ids.push(id.to_string());
        }
    };
    for entry in reply.split(['\n', ';']) {
        if normalize_item(entry).is_empty() {
            continue;
        }
        if let Some(id) = lookup.get(&normalize_item(entry)) {
            accept(id, &mut ranking);
            continue;
        }
        let pieces: Vec<&str> = entry.split(',').collect();
        let mut i = 0;
        while i < pieces.len() {
            let found = (i + 1..=pieces.len())
                .rev()
                .find_map(|j| lookup.get(&normalize_item(&pieces[i..j].join(","))).map(|id| (j, *id)));
            match found {
                Some((j, id)) => {
                    accept(id, &mut ranking);
                    i = j;
                }
                None => {
                    let item = pieces[i].trim();
                    if !normalize_item(item).is_empty() {
                        ranking.dropped.push(item.to_string());
                    }
                    i += 1;
                }
            }
        }
    }
    ranking
}

/// One ranker's ordering of `candidates` for a requirement.
///
/// `candidates` must already be sorted by ascending corpus frequency; the
/// prompt tells the model so.
pub fn rank_units(
    oracle: &dyn Oracle,
    template: &PromptTemplate,
    domain: &str,
    description: &str,
    candidates: &[RankCandidate],
) -> Result<Ranking, OracleError> {
    let tag_list = candidates
        .iter()
        .map(|c| c.label.as_str())
        .collect::<Vec<_>>()
        .join("; ");
    let prompt = template.render(&[
        ("domain", domain),
        ("description", description),
        ("tag_list", &tag_list),
    ])?;
    let reply = oracle.complete(&prompt)?;
    if reply.trim().is_empty() {
        return Err(OracleError::Failed {
            oracle: oracle.name().to_string(),
            message: "empty ranking reply".into(),
        });
    }
    let ranking = parse_ranked_list(&reply, candidates);
    if !ranking.dropped.is_empty() {
        log::warn!(
            "{}: dropped {} ranked item(s) not among candidates: {:?}",
            oracle.name(),
            ranking.dropped.len(),
            ranking.dropped
        );
    }
    Ok(ranking)
}

/// `Some(true)` for a leading yes/relevant, `Some(false)` for no/irrelevant.
pub fn parse_verdict(reply: &str) -> Option<bool> {
    let word: String = reply
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" | "relevant" | "true" => Some(true),
        "no" | "not" | "irrelevant" | "false" => Some(false),
        _ => None,
    }
}

/// Outcome of one ensemble relevance vote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub votes: usize,
    pub members: usize,
    pub relevant: bool,
    /// Members whose call failed or whose reply did not parse; each counted
    /// as a "not relevant" vote.
    pub failures: Vec<String>,
}

/// Queries every member once and takes a strict majority.
///
/// Errors only when every member fails.
pub fn judge_relevance(
    ensemble: &OracleEnsemble,
    template: &PromptTemplate,
    domain: &str,
    requirement: &str,
    instance: &CorpusInstance,
) -> Result<Verdict, OracleError> {
    let prompt = template.render(&[
        ("domain", domain),
        ("requirement", requirement),
        ("question", &instance.query),
        ("answer", &instance.answer),
    ])?;
    let replies: Vec<Result<bool, String>> = ensemble
        .members()
        .par_iter()
        .map(|m| match m.complete(&prompt) {
            Ok(reply) => parse_verdict(&reply).ok_or_else(|| {
                format!("{}: unparseable verdict {:?}", m.name(), reply)
            }),
            Err(e) => Err(e.to_string()),
        })
        .collect();

    let mut votes = 0;
    let mut failures = Vec::new();
    for r in replies {
        match r {
            Ok(true) => votes += 1,
            Ok(false) => {}
            Err(msg) => {
                log::warn!("judge failure on {} counted as not relevant: {msg}", instance.instance_id);
                failures.push(msg);
            }
        }
    }
    if failures.len() == ensemble.len() {
        return Err(OracleError::Failed {
            oracle: ensemble.ensemble_name.clone(),
            message: format!("every member failed: {}", failures.join("; ")),
        });
    }
    Ok(Verdict {
        votes,
        members: ensemble.len(),
        relevant: 2 * votes > ensemble.len(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{FnOracle, PromptLibrary};
    use std::sync::Arc;

    fn cands(names: &[(&str, &str)]) -> Vec<RankCandidate> {
        names
            .iter()
            .map(|(id, label)| RankCandidate {
                unit_id: id.to_string(),
                label: label.to_string(),
            })
            .collect()
    }

    #[test]
    fn granularity_labels_from_prompt_examples() {
        assert_eq!(
            parse_granularity("(moderate); Explanation: ..."),
            Some(GranularityLabel::Moderate)
        );
        assert_eq!(parse_granularity("(too coarse); x"), Some(GranularityLabel::Coarse));
        assert_eq!(parse_granularity("Output: (too fine)"), Some(GranularityLabel::Fine));
        assert_eq!(parse_granularity("I think moderate"), None);
    }

    #[test]
    fn classify_through_template() {
        let lib = PromptLibrary::builtin();
        let oracle = FnOracle::new("c", |p| {
            Ok(if p.user.ends_with("term: continuant.") {
                "(too coarse); vague".into()
            } else if p.user.ends_with("term: b-lymphocyte.") {
                "(too fine)".into()
            } else {
                "(moderate)".into()
            })
        });
        let c = |t| classify_granularity(&oracle, &lib.granularity, t, 3).unwrap();
        assert_eq!(c("anatomical entity"), GranularityLabel::Moderate);
        assert_eq!(c("continuant"), GranularityLabel::Coarse);
        assert_eq!(c("b-lymphocyte"), GranularityLabel::Fine);
    }

    #[test]
    fn classify_exhausts_retry_budget() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let lib = PromptLibrary::builtin();
        let calls = AtomicUsize::new(0);
        let oracle = FnOracle::new("c", |_| {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok("no idea".into())
        });
        let err = classify_granularity(&oracle, &lib.granularity, "x", 3).unwrap_err();
        assert!(matches!(err, OracleError::Unparseable { ref reply, .. } if reply == "no idea"));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn ranked_list_filters_unknown_units() {
        let c = cands(&[("u1", "Alpha"), ("u2", "Beta"), ("u3", "Gamma")]);
        let r = parse_ranked_list("1. Gamma\n2. u9\n3. alpha", &c);
        assert_eq!(r.unit_ids, vec!["u3", "u1"]);
        assert_eq!(r.dropped, vec!["2. u9"]);
    }

    #[test]
    fn ranked_list_handles_commas_inside_labels() {
        let c = cands(&[("a", "1,3-butadiene"), ("b", "Ring compound"), ("c", "Cyclization")]);
        let r = parse_ranked_list("Cyclization, 1,3-butadiene, Ring compound", &c);
        assert_eq!(r.unit_ids, vec!["c", "a", "b"]);
        assert!(r.dropped.is_empty());
    }

    #[test]
    fn ranked_list_dedups_and_caps() {
        let c: Vec<RankCandidate> = (0..150)
            .map(|i| RankCandidate {
                unit_id: format!("u{i}"),
                label: format!("Label {i}"),
            })
            .collect();
        let reply: Vec<String> = (0..150).map(|i| format!("Label {i}")).collect();
        let r = parse_ranked_list(&format!("Label 0\n{}", reply.join("\n")), &c);
        assert_eq!(r.unit_ids.len(), 100);
        assert_eq!(r.unit_ids[0], "u0");
        assert_eq!(r.unit_ids[1], "u1");
    }

    #[test]
    fn empty_ranking_reply_is_an_error() {
        let lib = PromptLibrary::builtin();
        let oracle = FnOracle::new("r", |_| Ok("  \n".into()));
        let c = cands(&[("u1", "Alpha")]);
        assert!(rank_units(&oracle, &lib.voting, "chem", "desc", &c).is_err());
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("Yes, because..."), Some(true));
        assert_eq!(parse_verdict("**No**."), Some(false));
        assert_eq!(parse_verdict("maybe"), None);
    }

    fn ensemble(replies: &[&'static str]) -> OracleEnsemble {
        let members: Vec<Arc<dyn Oracle>> = replies
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let r = *r;
                Arc::new(FnOracle::new(format!("m{i}"), move |_| {
                    if r == "fail" {
                        Err(OracleError::Failed {
                            oracle: format!("m{i}"),
                            message: "down".into(),
                        })
                    } else {
                        Ok(r.to_string())
                    }
                })) as Arc<dyn Oracle>
            })
            .collect();
        OracleEnsemble::new("judges", members).unwrap()
    }

    fn instance() -> CorpusInstance {
        CorpusInstance {
            instance_id: "d1".into(),
            query: "q".into(),
            answer: "a".into(),
            source: "s".into(),
        }
    }

    #[test]
    fn majority_votes() {
        let lib = PromptLibrary::builtin();
        let judge = |r: &[&'static str]| {
            judge_relevance(&ensemble(r), &lib.relevance, "d", "req", &instance()).unwrap()
        };
        let v = judge(&["yes", "yes", "no"]);
        assert_eq!((v.votes, v.relevant), (2, true));
        let v = judge(&["no", "no", "yes"]);
        assert_eq!((v.votes, v.relevant), (1, false));
        let v = judge(&["yes", "no"]);
        assert_eq!((v.votes, v.relevant), (1, false));
        let v = judge(&["yes", "fail", "yes"]);
        assert_eq!((v.votes, v.relevant, v.failures.len()), (2, true, 1));
        let v = judge(&["yes", "fail", "gibberish"]);
        assert_eq!((v.votes, v.relevant, v.failures.len()), (1, false, 2));
    }

    #[test]
    fn all_members_failing_is_an_error() {
        let lib = PromptLibrary::builtin();
        assert!(judge_relevance(&ensemble(&["fail", "fail"]), &lib.relevance, "d", "r", &instance()).is_err());
    }

    #[test]
    fn strict_majority_exhaustive() {
        // verdict <=> votes >= floor(n/2)+1, over every yes/no pattern
        let lib = PromptLibrary::builtin();
        for n in [1usize, 2, 3, 5] {
            for mask in 0u32..(1 << n) {
                let replies: Vec<&'static str> =
                    (0..n).map(|i| if mask >> i & 1 == 1 { "yes" } else { "no" }).collect();
                let e = ensemble(&replies);
                let v = judge_relevance(&e, &lib.relevance, "d", "r", &instance()).unwrap();
                assert_eq!(v.votes, mask.count_ones() as usize);
                assert_eq!(v.relevant, v.votes >= n / 2 + 1, "n={n} mask={mask:b}");
            }
        }
    }
}
