use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TagPrediction;
use crate::ontology::KeywordSet;
use crate::oracles::{Oracle, PromptLibrary, PERSONAS};
use crate::units::UnitSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complexity {
    Low,
    High,
}

impl fmt::Display for Complexity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Complexity::Low => "low",
            Complexity::High => "high",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTrainingInstance {
    pub query: String,
    pub gold_units: BTreeSet<String>,
    pub keywords_used: Vec<String>,
    pub persona: String,
    pub complexity: Complexity,
}

#[derive(Debug, Clone, Default)]
pub struct SynthOutput {
    pub instances: Vec<SyntheticTrainingInstance>,
    pub attempts: usize,
    pub skipped: usize,
    /// Attempt budget ran out before `count` instances were produced.
    pub aborted: bool,
}

const MAX_UNITS: usize = 5;
const MAX_KEYWORDS_PER_UNIT: usize = 3;

struct Draw {
    gold_units: BTreeSet<String>,
    keywords_used: Vec<String>,
    persona: &'static str,
    complexity: Complexity,
}

fn draw(eligible: &[&KeywordSet], seed: u64, attempt: u64) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(attempt);
    let k = rng.random_range(1..=MAX_UNITS).min(eligible.len());
    let mut gold_units = BTreeSet::new();
    let mut keywords_used = Vec::new();
    for i in sample(&mut rng, eligible.len(), k) {
        let ks = eligible[i];
        gold_units.insert(ks.unit_id.clone());
        let words: Vec<&String> = ks.keywords.iter().collect();
        let m = rng.random_range(1..=MAX_KEYWORDS_PER_UNIT).min(words.len());
        for j in sample(&mut rng, words.len(), m) {
            keywords_used.push(words[j].clone());
        }
    }
    let persona = PERSONAS[rng.random_range(0..PERSONAS.len())];
    let complexity = if rng.random_bool(0.5) {
        Complexity::High
    } else {
        Complexity::Low
    };
    Draw {
        gold_units,
        keywords_used,
        persona,
        complexity,
    }
}

/// Samples unit/keyword combinations and asks `generator` for a query.
///
/// Units with empty keyword sets are never drawn. Attempt `i` uses its own
/// RNG stream, so output depends only on `seed` and the generator replies.
/// At most `2·count` attempts are made.
pub fn generate_synthetic_instances(
    units: &UnitSet,
    keyword_sets: &BTreeMap<String, KeywordSet>,
    count: usize,
    seed: u64,
    generator: &dyn Oracle,
    prompts: &PromptLibrary,
) -> Result<SynthOutput> {
    let eligible: Vec<&KeywordSet> = units
        .scientific()
        .filter_map(|u| keyword_sets.get(&u.unit_id))
        .filter(|ks| !ks.is_empty())
        .collect();
    if eligible.is_empty() {
        return Err(Error::Validation(
            "no unit has a non-empty keyword set".into(),
        ));
    }
    let budget = count.saturating_mul(2);
    let mut out = SynthOutput::default();
    while out.instances.len() < count && out.attempts < budget {
        let need = (count - out.instances.len()).min(budget - out.attempts);
        let batch: Vec<(u64, Option<SyntheticTrainingInstance>)> = (out.attempts
            ..out.attempts + need)
            .into_par_iter()
            .map(|a| {
                let d = draw(&eligible, seed, a as u64);
                let template = match d.complexity {
                    Complexity::Low => &prompts.query_low,
                    Complexity::High => &prompts.query_high,
                };
                let keywords = d.keywords_used.join(", ");
                let reply = template
                    .render(&[("persona", d.persona), ("keywords", &keywords)])
                    .and_then(|p| generator.complete(&p));
                let inst = match reply {
                    Ok(q) if !q.trim().is_empty() => Some(SyntheticTrainingInstance {
                        query: q.trim().to_string(),
                        gold_units: d.gold_units,
                        keywords_used: d.keywords_used,
                        persona: d.persona.to_string(),
                        complexity: d.complexity,
                    }),
                    Ok(_) => {
                        log::warn!("synthetic attempt {a}: empty query");
                        None
                    }
                    Err(e) => {
                        log::warn!("synthetic attempt {a}: {e}");
                        None
                    }
                };
                (a as u64, inst)
            })
            .collect();
        out.attempts += need;
        for (_, inst) in batch {
            match inst {
                Some(i) => out.instances.push(i),
                None => out.skipped += 1,
            }
        }
    }
    if out.instances.len() < count {
        out.aborted = true;
        log::warn!(
            "synthetic generation stopped after {} attempts with {}/{count} instances",
            out.attempts,
            out.instances.len()
        );
    }
    Ok(out)
}

/// One line of the tagger training export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub query: String,
    pub gold_units: String,
    pub persona: String,
    pub complexity: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixCounts {
    pub synthetic: usize,
    pub real: usize,
}

/// Training mix: synthetic instances followed by annotated real queries.
///
/// Real records carry persona `real` and complexity `none`.
pub fn training_records(
    synthetic: &[SyntheticTrainingInstance],
    real: &[(String, TagPrediction)],
) -> (Vec<TrainingRecord>, MixCounts) {
    let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(",");
    let mut records: Vec<TrainingRecord> = synthetic
        .iter()
        .map(|s| TrainingRecord {
            query: s.query.clone(),
            gold_units: join(&s.gold_units),
            persona: s.persona.clone(),
            complexity: s.complexity.to_string(),
        })
        .collect();
    records.extend(real.iter().map(|(query, p)| TrainingRecord {
        query: query.clone(),
        gold_units: join(&p.units),
        persona: "real".into(),
        complexity: "none".into(),
    }));
    let counts = MixCounts {
        synthetic: synthetic.len(),
        real: real.len(),
    };
    (records, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{FnOracle, OracleError};
    use crate::units::KnowledgeUnit;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn fixture() -> (UnitSet, BTreeMap<String, KeywordSet>) {
        let mut units = vec![];
        let mut sets = BTreeMap::new();
        for (i, kws) in [vec!["alpha", "beta"], vec![], vec!["gamma"], vec!["delta", "eps", "zeta", "eta"]]
            .into_iter()
            .enumerate()
        {
            let u = KnowledgeUnit::new("g", &format!("n{i}"), &format!("Unit {i}"));
            sets.insert(
                u.unit_id.clone(),
                KeywordSet {
                    unit_id: u.unit_id.clone(),
                    keywords: kws.into_iter().map(String::from).collect(),
                },
            );
            units.push(u);
        }
        units.push(KnowledgeUnit::non_scientific());
        (
            UnitSet {
                units,
                selection_log: vec![],
            },
            sets,
        )
    }

    fn echo() -> FnOracle<impl Fn(&crate::oracles::Prompt) -> std::result::Result<String, OracleError> + Send + Sync> {
        FnOracle::new("echo", |p| {
            let line = p
                .user
                .lines()
                .find(|l| l.starts_with("Keywords:"))
                .unwrap_or(&p.user);
            Ok(line.to_string())
        })
    }

    #[test]
    fn echo_query_contains_keywords_and_respects_invariants() {
        let (units, sets) = fixture();
        let out =
            generate_synthetic_instances(&units, &sets, 40, 7, &echo(), &PromptLibrary::builtin())
                .unwrap();
        assert_eq!(out.instances.len(), 40);
        assert!(!out.aborted);
        for inst in &out.instances {
            assert!((1..=5).contains(&inst.gold_units.len()));
            assert!(!inst.gold_units.contains("g:n1"));
            for kw in &inst.keywords_used {
                assert!(inst.query.contains(kw.as_str()), "{kw} not in {}", inst.query);
                assert!(inst.gold_units.iter().any(|u| sets[u].keywords.contains(kw)));
            }
            assert!(PERSONAS.contains(&inst.persona.as_str()));
        }
    }

    #[test]
    fn same_seed_same_output() {
        let (units, sets) = fixture();
        let lib = PromptLibrary::builtin();
        let a = generate_synthetic_instances(&units, &sets, 10, 3, &echo(), &lib).unwrap();
        let b = generate_synthetic_instances(&units, &sets, 10, 3, &echo(), &lib).unwrap();
        assert_eq!(a.instances, b.instances);
        let c = generate_synthetic_instances(&units, &sets, 10, 4, &echo(), &lib).unwrap();
        assert_ne!(a.instances, c.instances);
    }

    #[test]
    fn failing_generator_aborts_after_budget() {
        let (units, sets) = fixture();
        let calls = AtomicUsize::new(0);
        let flaky = FnOracle::new("flaky", |_| {
            let n = calls.fetch_add(1, Ordering::SeqCst);
            if n % 2 == 0 {
                Err(OracleError::Failed {
                    oracle: "flaky".into(),
                    message: "down".into(),
                })
            } else {
                Ok("a query".into())
            }
        });
        let never = FnOracle::new("never", |_| {
            Err(OracleError::Failed {
                oracle: "never".into(),
                message: "down".into(),
            })
        });
        let lib = PromptLibrary::builtin();
        let out = generate_synthetic_instances(&units, &sets, 5, 1, &never, &lib).unwrap();
        assert!(out.aborted);
        assert_eq!(out.attempts, 10);
        assert_eq!(out.skipped, 10);
        assert!(out.instances.is_empty());
        let out = generate_synthetic_instances(&units, &sets, 5, 1, &flaky, &lib).unwrap();
        assert!(out.instances.len() <= 5 && out.attempts <= 10);
    }

    #[test]
    fn export_reports_mix_counts() {
        let (units, sets) = fixture();
        let out =
            generate_synthetic_instances(&units, &sets, 3, 0, &echo(), &PromptLibrary::builtin())
                .unwrap();
        let real = vec![(
            "what is x".to_string(),
            TagPrediction {
                instance_id: "r1".into(),
                units: BTreeSet::from(["g:n0".to_string(), "g:n2".to_string()]),
            },
        )];
        let (records, counts) = training_records(&out.instances, &real);
        assert_eq!(counts, MixCounts { synthetic: 3, real: 1 });
        assert_eq!(records.len(), 4);
        assert_eq!(records[3].gold_units, "g:n0,g:n2");
    }
}
