//! Query → knowledge-unit tagging.
//!
//! [`BaselineTagger`] is a deterministic fuzzy keyword matcher. Any other
//! tagger (a fine-tuned model, an annotation LLM) plugs in through
//! [`OracleTagger`] with the same [`Tagger`] contract.

mod eval;
mod similarity;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusInstance;
use crate::ontology::KeywordSet;
use crate::oracles::{parse_ranked_list, Oracle, OracleError, PromptTemplate, RankCandidate};
use crate::units::UnitSet;
use crate::NON_SCIENTIFIC;

pub use eval::{evaluate_tagger, greedy_match, GoldTags, TaggerScorecard, UnitCounts};
pub use similarity::{lcs_len, normalized_indel_similarity};
pub use synth::{
    generate_synthetic_instances, training_records, Complexity, MixCounts, SynthOutput,
    SyntheticTrainingInstance, TrainingRecord,
};

pub trait Tagger: Send + Sync {
    /// Recorded in the index build metadata.
    fn identity(&self) -> String;
    fn tag(&self, query: &str) -> Result<BTreeSet<String>, OracleError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagPrediction {
    pub instance_id: String,
    pub units: BTreeSet<String>,
}

struct Keyword {
    chars: Vec<char>,
    words: usize,
}

/// Fuzzy keyword matcher over unit keyword sets.
///
/// A unit is predicted when one of its keywords reaches `threshold` Indel
/// similarity against some n-gram (n ≤ keyword words + 1) of the lowercased
/// query tokens.
pub struct BaselineTagger {
    units: Vec<(String, Vec<Keyword>)>,
    threshold: f64,
}

/// Lowercased whitespace tokens with leading/trailing punctuation removed.
pub fn query_tokens(query: &str) -> Vec<String> {
    query
        .to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

impl BaselineTagger {
    pub const DEFAULT_THRESHOLD: f64 = 85.0;

    pub fn new(keyword_sets: &BTreeMap<String, KeywordSet>, threshold: f64) -> Self {
        let units = keyword_sets
            .values()
            .filter(|ks| ks.unit_id != NON_SCIENTIFIC && !ks.is_empty())
            .map(|ks| {
                let kws = ks
                    .keywords
                    .iter()
                    .map(|k| Keyword {
                        chars: k.chars().collect(),
                        words: k.split_whitespace().count().max(1),
                    })
                    .collect();
                (ks.unit_id.clone(), kws)
            })
            .collect();
        BaselineTagger { units, threshold }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    fn matches(&self, keywords: &[Keyword], grams: &[Vec<Vec<char>>]) -> bool {
        keywords.iter().any(|kw| {
            let max_n = (kw.words + 1).min(grams.len());
            grams[..max_n].iter().flatten().any(|gram| {
                similarity::similarity_bound(kw.chars.len(), gram.len()) >= self.threshold
                    && similarity::indel_similarity_chars(&kw.chars, gram) >= self.threshold
            })
        })
    }

    pub fn tag_query(&self, query: &str) -> BTreeSet<String> {
        let tokens = query_tokens(query);
        let max_words = self.units.iter().flat_map(|(_, k)| k).map(|k| k.words).max().unwrap_or(0);
        // grams[n-1] = all n-grams
        let grams: Vec<Vec<Vec<char>>> = (1..=(max_words + 1).min(tokens.len()))
            .map(|n| tokens.windows(n).map(|w| w.join(" ").chars().collect()).collect())
            .collect();
        let mut out: BTreeSet<String> = self
            .units
            .iter()
            .filter(|(_, kws)| self.matches(kws, &grams))
            .map(|(id, _)| id.clone())
            .collect();
        if out.is_empty() {
            out.insert(NON_SCIENTIFIC.to_string());
        }
        out
    }
}

impl Tagger for BaselineTagger {
    fn identity(&self) -> String {
        format!("baseline-fuzzy-keyword(threshold={})", self.threshold)
    }

    fn tag(&self, query: &str) -> Result<BTreeSet<String>, OracleError> {
        Ok(self.tag_query(query))
    }
}

/// Tagger served by an oracle (a fine-tuned tagger or an annotation LLM).
pub struct OracleTagger {
    oracle: Arc<dyn Oracle>,
    template: PromptTemplate,
    candidates: Vec<RankCandidate>,
}

impl OracleTagger {
    pub fn new(oracle: Arc<dyn Oracle>, template: PromptTemplate, units: &UnitSet) -> Self {
        let candidates = units
            .units
            .iter()
            .map(|u| RankCandidate {
                unit_id: u.unit_id.clone(),
                label: if u.is_non_scientific() {
                    NON_SCIENTIFIC.to_string()
                } else {
                    u.name.clone()
                },
            })
            .collect();
        OracleTagger {
            oracle,
            template,
            candidates,
        }
    }
}

impl Tagger for OracleTagger {
    fn identity(&self) -> String {
        format!("oracle:{}", self.oracle.name())
    }

    fn tag(&self, query: &str) -> Result<BTreeSet<String>, OracleError> {
        let unit_list = self
            .candidates
            .iter()
            .map(|c| c.label.as_str())
            .collect::<Vec<_>>()
            .join("; ");
        let prompt = self
            .template
            .render(&[("unit_list", &unit_list), ("query", query)])?;
        let reply = self.oracle.complete(&prompt)?;
        let ranking = parse_ranked_list(&reply, &self.candidates);
        let mut units: BTreeSet<String> = ranking.unit_ids.into_iter().collect();
        if units.len() > 1 {
            units.remove(NON_SCIENTIFIC);
        }
        if units.is_empty() {
            units.insert(NON_SCIENTIFIC.to_string());
        }
        Ok(units)
    }
}

/// Annotates real queries in one batch; failures become non-scientific.
pub fn annotate_queries(instances: &[CorpusInstance], tagger: &dyn Tagger) -> Vec<TagPrediction> {
    instances
        .par_iter()
        .map(|inst| TagPrediction {
            instance_id: inst.instance_id.clone(),
            units: tagger.tag(&inst.query).unwrap_or_else(|e| {
                log::warn!("annotation failed on {}: {e}", inst.instance_id);
                BTreeSet::from([NON_SCIENTIFIC.to_string()])
            }),
        })
        .collect()
}
