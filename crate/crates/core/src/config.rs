//! Run configuration (TOML).
//!
//! ```toml
//! [paths]
//! ontology_dir = "ontology"
//! corpus = ["corpus.jsonl"]
//! units = "units.tsv"
//! index = "index.tsv"
//!
//! [params]
//! k1 = 10
//! k2 = 100
//!
//! [oracles.classifier]
//! name = "classifier"
//! fixture = "fixtures/classifier.tsv"
//!
//! [[oracles.rankers]]
//! name = "ranker-a"
//! http = { base_url = "http://localhost:8000/v1", model = "m", api_key_env = "API_KEY" }
//! ```
//!
//! Relative paths are resolved against the directory holding the config
//! file. The serialized form keeps them as written so run manifests do not
//! depend on where the checkout lives.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::oracles::{
    EmbeddingProvider, FixtureEmbedding, FixtureLikelihood, HashedTrigramEmbedder, HttpConfig,
    HttpEmbedding, HttpLikelihood, HttpOracle, InFlightLimit, LikelihoodProvider, Oracle,
    ScriptedOracle,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default)]
    pub ontology_dir: Option<PathBuf>,
    #[serde(default)]
    pub corpus: Vec<PathBuf>,
    #[serde(default)]
    pub exclusions: Option<PathBuf>,
    #[serde(default)]
    pub units: Option<PathBuf>,
    #[serde(default)]
    pub index: Option<PathBuf>,
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn d_k1() -> usize {
    10
}
fn d_k2() -> usize {
    100
}
fn d_trials() -> usize {
    100
}
fn d_threshold() -> f64 {
    85.0
}
fn d_retry() -> usize {
    2
}
fn d_attempts() -> usize {
    3
}
fn d_min_desc() -> usize {
    10
}
fn d_timestamp() -> String {
    "unspecified".into()
}
fn d_in_flight() -> usize {
    8
}
fn d_dim() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default = "d_k1")]
    pub k1: usize,
    #[serde(default = "d_k2")]
    pub k2: usize,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Baseline tagger match threshold (inclusive).
    #[serde(default = "d_threshold")]
    pub tag_threshold: f64,
    /// Tagger evaluation threshold (exclusive).
    #[serde(default = "d_threshold")]
    pub eval_threshold: f64,
    #[serde(default = "d_retry")]
    pub mcq_retry_budget: usize,
    #[serde(default)]
    pub shuffle_options: bool,
    #[serde(default = "d_attempts")]
    pub classifier_attempts: usize,
    #[serde(default = "d_min_desc")]
    pub min_descendants: usize,
    #[serde(default)]
    pub recurse_after_moderate: bool,
    #[serde(default)]
    pub normalize_objective: bool,
    /// Written into index build metadata.
    #[serde(default = "d_timestamp")]
    pub timestamp: String,
    #[serde(default = "d_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "d_dim")]
    pub embedding_dim: usize,
}

impl Default for Params {
    fn default() -> Self {
        toml::from_str("").expect("defaults parse")
    }
}

/// A model endpoint: either a scripted fixture file or an HTTP server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Oracles {
    #[serde(default)]
    pub classifier: Option<OracleSpec>,
    #[serde(default)]
    pub rankers: Vec<OracleSpec>,
    #[serde(default)]
    pub judges: Vec<OracleSpec>,
    #[serde(default)]
    pub generator: Option<OracleSpec>,
    /// External tagger; the baseline keyword tagger when absent.
    #[serde(default)]
    pub tagger: Option<OracleSpec>,
    /// Token likelihoods; the offline surrogate when absent.
    #[serde(default)]
    pub likelihood: Option<OracleSpec>,
    /// Embeddings; hashed character trigrams when absent.
    #[serde(default)]
    pub embedding: Option<OracleSpec>,
    #[serde(default)]
    pub models: Vec<OracleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub oracles: Oracles,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(origin, line, e.message().to_string())
        })?;
        cfg.base_dir = origin.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        for (name, v) in [("k1", p.k1), ("k2", p.k2), ("trials", p.trials), ("max_in_flight", p.max_in_flight), ("embedding_dim", p.embedding_dim)] {
            if v == 0 {
                return Err(Error::Validation(format!("params.{name} must be at least 1")));
            }
        }
        for (name, t) in [("tag_threshold", p.tag_threshold), ("eval_threshold", p.eval_threshold)] {
            if !(0.0..=100.0).contains(&t) {
                return Err(Error::Validation(format!("params.{name} must lie in [0, 100]")));
            }
        }
        let o = &self.oracles;
        let specs = o
            .classifier
            .iter()
            .chain(&o.rankers)
            .chain(&o.judges)
            .chain(&o.generator)
            .chain(&o.tagger)
            .chain(&o.likelihood)
            .chain(&o.embedding)
            .chain(&o.models);
        for s in specs {
            if s.fixture.is_some() == s.http.is_some() {
                return Err(Error::Validation(format!(
                    "oracle {:?} needs exactly one of `fixture` or `http`",
                    s.name
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Resolved path of a declared path field, or a validation error naming it.
    pub fn require(&self, field: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
        p.as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Validation(format!("paths.{field} is not configured")))
    }

    pub fn corpus_paths(&self) -> Result<Vec<PathBuf>> {
        if self.paths.corpus.is_empty() {
            return Err(Error::Validation("paths.corpus is not configured".into()));
        }
        Ok(self.paths.corpus.iter().map(|p| self.resolve(p)).collect())
    }

    pub fn oracle(&self, spec: &OracleSpec, limit: &Arc<InFlightLimit>) -> Result<Arc<dyn Oracle>> {
        match (&spec.fixture, &spec.http) {
            (Some(f), None) => Ok(Arc::new(ScriptedOracle::load(spec.name.clone(), &self.resolve(f))?)),
            (None, Some(h)) => Ok(Arc::new(HttpOracle::new(spec.name.clone(), h.clone(), Some(limit.clone())))),
            _ => Err(Error::Validation(format!("oracle {:?} is misconfigured", spec.name))),
        }
    }

    pub fn required_oracle(&self, role: &str, spec: &Option<OracleSpec>, limit: &Arc<InFlightLimit>) -> Result<Arc<dyn Oracle>> {
        let spec = spec
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("oracles.{role} is not configured")))?;
        self.oracle(spec, limit)
    }

    pub fn oracle_list(&self, role: &str, specs: &[OracleSpec], limit: &Arc<InFlightLimit>) -> Result<Vec<Arc<dyn Oracle>>> {
        if specs.is_empty() {
            return Err(Error::Validation(format!("oracles.{role} needs at least one entry")));
        }
        specs.iter().map(|s| self.oracle(s, limit)).collect()
    }

    pub fn likelihood(&self, limit: &Arc<InFlightLimit>) -> Result<Option<Box<dyn LikelihoodProvider>>> {
        let Some(spec) = &self.oracles.likelihood else {
            return Ok(None);
        };
        Ok(Some(match &spec.http {
            Some(h) => Box::new(HttpLikelihood::new(spec.name.clone(), h.clone(), Some(limit.clone()))),
            None => Box::new(FixtureLikelihood(self.oracle(spec, limit)?)),
        }))
    }

    pub fn embedder(&self, limit: &Arc<InFlightLimit>) -> Result<Box<dyn EmbeddingProvider>> {
        let Some(spec) = &self.oracles.embedding else {
            return Ok(Box::new(HashedTrigramEmbedder {
                dim: self.params.embedding_dim,
                seed: self.params.seed,
            }));
        };
        Ok(match &spec.http {
            Some(h) => Box::new(HttpEmbedding::new(spec.name.clone(), h.clone(), Some(limit.clone()))),
            None => Box::new(FixtureEmbedding(self.oracle(spec, limit)?)),
        })
    }

    /// Config as recorded in run manifests, paths as written.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = PipelineConfig::parse("", Path::new("/x/run.toml")).unwrap();
        assert_eq!(cfg.params.k1, 10);
        assert_eq!(cfg.params.k2, 100);
        assert_eq!(cfg.params.trials, 100);
        assert_eq!(cfg.params.seed, 0);
        assert_eq!(cfg.params.timestamp, "unspecified");
        assert_eq!(cfg.resolve(Path::new("a.tsv")), PathBuf::from("/x/a.tsv"));
    }

    #[test]
    fn rejects_bad_values() {
        let o = Path::new("c.toml");
        assert!(PipelineConfig::parse("[params]\nk1 = 0\n", o).is_err());
        assert!(PipelineConfig::parse("[params]\nbogus = 1\n", o).is_err());
        let err = PipelineConfig::parse("[oracles.generator]\nname = \"g\"\n", o).unwrap_err();
        assert!(err.to_string().contains("exactly one"));
        match PipelineConfig::parse("\n\n[params]\nk1 = \"x\"\n", o).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn oracle_specs_parse() {
        let cfg = PipelineConfig::parse(
            r#"
[oracles.classifier]
name = "c"
fixture = "f.tsv"

[[oracles.rankers]]
name = "r"
http = { base_url = "http://localhost:1/v1", model = "m", api_key_env = "KEY" }
"#,
            Path::new("c.toml"),
        )
        .unwrap();
        assert_eq!(cfg.oracles.rankers[0].http.as_ref().unwrap().model, "m");
        let json = cfg.to_json();
        assert_eq!(json["oracles"]["classifier"]["fixture"], "f.tsv");
    }
}
