use std::sync::Arc;

use super::{Oracle, OracleError, Prompt};

/// Per-token log-probabilities of an answer conditioned on its question.
pub trait LikelihoodProvider: Send + Sync {
    fn name(&self) -> &str;
    fn answer_logprobs(&self, question: &str, answer: &str) -> Result<Vec<f64>, OracleError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, text: &str) -> Result<Vec<f64>, OracleError>;
}

fn parse_floats(oracle: &str, role: &'static str, reply: &str) -> Result<Vec<f64>, OracleError> {
    let values: Result<Vec<f64>, _> = reply
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse::<f64>)
        .collect();
    match values {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(OracleError::Unparseable {
            oracle: oracle.to_string(),
            role,
            reply: reply.to_string(),
        }),
    }
}

/// Likelihoods served by a scripted oracle: the request is the user prompt
/// `question:\n<q>\nanswer:\n<a>` and the reply is a comma-separated list.
pub struct FixtureLikelihood(pub Arc<dyn Oracle>);

impl FixtureLikelihood {
    pub fn request(question: &str, answer: &str) -> Prompt {
        Prompt::user(format!("question:\n{question}\nanswer:\n{answer}"))
    }
}

impl LikelihoodProvider for FixtureLikelihood {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn answer_logprobs(&self, question: &str, answer: &str) -> Result<Vec<f64>, OracleError> {
        let reply = self.0.complete(&Self::request(question, answer))?;
        parse_floats(self.0.name(), "likelihood", &reply)
    }
}

pub struct FnLikelihood<F> {
    name: String,
    f: F,
}

impl<F> FnLikelihood<F>
where
    F: Fn(&str, &str) -> Result<Vec<f64>, OracleError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnLikelihood {
            name: name.into(),
            f,
        }
    }
}

impl<F> LikelihoodProvider for FnLikelihood<F>
where
    F: Fn(&str, &str) -> Result<Vec<f64>, OracleError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn answer_logprobs(&self, question: &str, answer: &str) -> Result<Vec<f64>, OracleError> {
        (self.f)(question, answer)
    }
}

/// Embeddings served by a scripted oracle: the request is the user prompt
/// `embed:\n<text>`, the reply a comma-separated vector.
pub struct FixtureEmbedding(pub Arc<dyn Oracle>);

impl EmbeddingProvider for FixtureEmbedding {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, OracleError> {
        let reply = self.0.complete(&Prompt::user(format!("embed:\n{text}")))?;
        parse_floats(self.0.name(), "embedding", &reply)
    }
}

/// Offline surrogate: feature-hashed character-trigram counts, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedTrigramEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashedTrigramEmbedder {
    fn default() -> Self {
        HashedTrigramEmbedder { dim: 256, seed: 0 }
    }
}

impl HashedTrigramEmbedder {
    fn bucket(&self, gram: &[char]) -> usize {
        // FNV-1a, seeded
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        for c in gram {
            for b in (*c as u32).to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        (h % self.dim as u64) as usize
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let chars: Vec<char> = std::iter::once(' ')
            .chain(text.to_lowercase().chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut v = vec![0.0; self.dim];
        for gram in chars.windows(3) {
            v[self.bucket(gram)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingProvider for HashedTrigramEmbedder {
    fn name(&self) -> &str {
        "hashed-trigram-surrogate"
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, OracleError> {
        Ok(self.vector(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::ScriptedOracle;

    #[test]
    fn trigram_embedding_is_unit_norm_and_deterministic() {
        let e = HashedTrigramEmbedder::default();
        let a = e.vector("Cyclization of dienes");
        assert_eq!(a.len(), 256);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a, e.vector("Cyclization of dienes"));
        assert_ne!(a, HashedTrigramEmbedder { dim: 256, seed: 7 }.vector("Cyclization of dienes"));
        assert!(e.vector("").iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fixture_likelihood_parses_floats() {
        let req = FixtureLikelihood::request("q", "a");
        let o = ScriptedOracle::new("lp").with_reply(&req, "-0.5, -0.25");
        let p = FixtureLikelihood(Arc::new(o));
        assert_eq!(p.answer_logprobs("q", "a").unwrap(), vec![-0.5, -0.25]);
    }

    #[test]
    fn fixture_embedding_rejects_garbage() {
        let o = ScriptedOracle::new("e").with_route(".*", "not numbers").unwrap();
        assert!(matches!(
            FixtureEmbedding(Arc::new(o)).embed("x"),
            Err(OracleError::Unparseable { .. })
        ));
    }
}
