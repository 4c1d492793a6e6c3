use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Candidate;
use crate::oracles::{EmbeddingProvider, LikelihoodProvider, OracleError};
use crate::Result;

/// `exp(−mean log p)` over per-token log-probabilities.
pub fn hardness_from_logprobs(logprobs: &[f64]) -> Option<f64> {
    if logprobs.is_empty() || logprobs.iter().any(|l| !l.is_finite() || *l > 0.0) {
        return None;
    }
    let mean = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
    Some((-mean).exp())
}

/// Hardness from a likelihood provider.
pub fn hardness_score(
    question: &str,
    answer: &str,
    provider: &dyn LikelihoodProvider,
) -> std::result::Result<f64, OracleError> {
    let lp = provider.answer_logprobs(question, answer)?;
    hardness_from_logprobs(&lp).ok_or_else(|| OracleError::Unparseable {
        oracle: provider.name().to_string(),
        role: "likelihood",
        reply: format!("{lp:?}"),
    })
}

const BOS: char = '\u{2}';
const EOS: char = '\u{3}';

/// Add-one smoothed character bigram model.
#[derive(Debug, Clone)]
pub struct BigramModel {
    pairs: HashMap<(char, char), usize>,
    firsts: HashMap<char, usize>,
    vocab: usize,
}

fn padded(text: &str) -> Vec<char> {
    std::iter::once(BOS)
        .chain(text.chars())
        .chain(std::iter::once(EOS))
        .collect()
}

impl BigramModel {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut pairs = HashMap::new();
        let mut firsts = HashMap::new();
        let mut chars = std::collections::HashSet::new();
        for t in texts {
            let p = padded(t);
            chars.extend(p.iter().copied());
            for w in p.windows(2) {
                *pairs.entry((w[0], w[1])).or_insert(0) += 1;
                *firsts.entry(w[0]).or_insert(0) += 1;
            }
        }
        // one extra slot for characters never seen
        BigramModel {
            pairs,
            firsts,
            vocab: chars.len() + 1,
        }
    }

    /// Mean negative log-probability per bigram, in nats.
    pub fn cross_entropy(&self, text: &str) -> f64 {
        let p = padded(text);
        let n = p.len() - 1;
        let total: f64 = p
            .windows(2)
            .map(|w| {
                let c = self.pairs.get(&(w[0], w[1])).copied().unwrap_or(0) as f64;
                let f = self.firsts.get(&w[0]).copied().unwrap_or(0) as f64;
                -((c + 1.0) / (f + self.vocab as f64)).ln()
            })
            .sum();
        total / n as f64
    }

    /// Perplexity-like offline stand-in for answer hardness.
    pub fn surrogate_hardness(&self, text: &str) -> f64 {
        self.cross_entropy(text).exp()
    }
}

fn syllables(word: &str) -> usize {
    let w: Vec<char> = word.to_lowercase().chars().filter(|c| c.is_alphabetic()).collect();
    let vowel = |c: &char| "aeiouy".contains(*c);
    let mut groups = 0;
    let mut prev = false;
    for c in &w {
        let v = vowel(c);
        if v && !prev {
            groups += 1;
        }
        prev = v;
    }
    if groups > 1 && w.last() == Some(&'e') {
        groups -= 1;
    }
    groups.max(1)
}

fn sentence_count(text: &str) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let n = chars
        .iter()
        .enumerate()
        .filter(|&(i, c)| {
            matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace())
        })
        .count();
    n.max(1)
}

/// Flesch Reading Ease.
pub fn flesch_reading_ease(text: &str) -> f64 {
    let words: Vec<&str> = text
        .split_whitespace()
        .filter(|w| w.chars().any(char::is_alphanumeric))
        .collect();
    let n_words = words.len().max(1) as f64;
    let syl: usize = words.iter().map(|w| syllables(w)).sum();
    let syl = if words.is_empty() { 1 } else { syl };
    206.835 - 1.015 * (n_words / sentence_count(text) as f64) - 84.6 * (syl as f64 / n_words)
}

pub fn quality_score(query: &str, answer: &str) -> f64 {
    flesch_reading_ease(&format!("{query} {answer}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    #[serde(flatten)]
    pub candidate: Candidate,
    pub hardness: f64,
    /// Hardness came from the offline bigram surrogate.
    pub hardness_surrogate: bool,
    pub quality: f64,
    #[serde(skip)]
    pub embedding: Vec<f64>,
}

/// Scores every instance of `pool`.
///
/// Without a likelihood provider, or when it fails on an instance,
/// hardness falls back to the bigram surrogate fit on the pool's answers.
pub fn score_candidates(
    pool: Vec<Candidate>,
    likelihood: Option<&dyn LikelihoodProvider>,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<ScoredCandidate>> {
    let model = BigramModel::fit(pool.iter().map(|c| c.instance.answer.as_str()));
    pool.into_par_iter()
        .map(|c| {
            let q = &c.instance.query;
            let a = &c.instance.answer;
            let provided = likelihood.and_then(|p| match hardness_score(q, a, p) {
                Ok(h) => Some(h),
                Err(e) => {
                    log::warn!("{}: likelihood failed, using surrogate: {e}", c.instance.instance_id);
                    None
                }
            });
            let (hardness, hardness_surrogate) = match provided {
                Some(h) => (h, false),
                None => (model.surrogate_hardness(a), true),
            };
            let embedding = embedder.embed(&format!("{q}\n{a}"))?;
            Ok(ScoredCandidate {
                quality: quality_score(q, a),
                candidate: c,
                hardness,
                hardness_surrogate,
                embedding,
            })
        })
        .collect()
}
