//! Multiple-choice conversion of proxy-subset instances.
//!
//! Benchmark files are JSON lines: a header object carrying
//! `benchmark_id`, `requirement` and `provenance`, then one
//! `{"query", "answer", "source_instance_id"}` object per item. Items are
//! validated again on load.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::CorpusInstance;
use crate::fsutil::write_atomic;
use crate::oracles::{Oracle, PromptTemplate};
use crate::pipeline::Requirement;
use crate::{Error, Result};

pub const LABELS: [char; 5] = ['A', 'B', 'C', 'D', 'E'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    ParseError,
    OptionCount,
    LabelSequence,
    DuplicateOptions,
    AnswerLabelOutsideOptions,
    GeneratorError,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::ParseError => "parse error",
            SkipReason::OptionCount => "option count",
            SkipReason::LabelSequence => "label sequence",
            SkipReason::DuplicateOptions => "duplicate options",
            SkipReason::AnswerLabelOutsideOptions => "answer label outside options",
            SkipReason::GeneratorError => "generator error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqOption {
    pub label: char,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub query: String,
    pub answer: String,
    pub source_instance_id: String,
    #[serde(skip)]
    pub options: Vec<McqOption>,
}

static OPTION_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\(?([A-Z])[.):]\s*(.*?)\s*$").unwrap());

fn option_lines(query: &str) -> Vec<(usize, char, String)> {
    query
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let c = OPTION_LINE.captures(line)?;
            let label = c[1].chars().next()?;
            Some((i, label, c[2].to_string()))
        })
        .collect()
}

fn normalize_label(answer: &str) -> String {
    answer
        .trim()
        .trim_matches(|c: char| matches!(c, '(' | ')' | '.' | '"' | '\'' | ' '))
        .to_uppercase()
}

/// Checks the item invariants and returns the parsed options.
pub fn validate_mcq(query: &str, answer: &str) -> std::result::Result<Vec<McqOption>, SkipReason> {
    let lines = option_lines(query);
    if !(4..=5).contains(&lines.len()) {
        return Err(SkipReason::OptionCount);
    }
    if lines.iter().zip(LABELS).any(|((_, l, _), want)| *l != want) {
        return Err(SkipReason::LabelSequence);
    }
    let mut seen = HashSet::new();
    for (_, _, text) in &lines {
        if !seen.insert(text.split_whitespace().collect::<Vec<_>>().join(" ")) {
            return Err(SkipReason::DuplicateOptions);
        }
    }
    let label = normalize_label(answer);
    if !lines.iter().any(|(_, l, _)| label.len() == 1 && label.starts_with(*l)) {
        return Err(SkipReason::AnswerLabelOutsideOptions);
    }
    Ok(lines
        .into_iter()
        .map(|(_, label, text)| McqOption { label, text })
        .collect())
}

impl McqItem {
    pub fn new(query: String, answer: &str, source_instance_id: String) -> std::result::Result<Self, SkipReason> {
        let options = validate_mcq(&query, answer)?;
        Ok(McqItem {
            query,
            answer: normalize_label(answer),
            source_instance_id,
            options,
        })
    }

    /// Permutes the options and rewrites labels and answer to match.
    pub fn shuffled(&self, rng: &mut ChaCha8Rng) -> McqItem {
        let mut order: Vec<usize> = (0..self.options.len()).collect();
        order.shuffle(rng);
        let positions: Vec<usize> = option_lines(&self.query).iter().map(|o| o.0).collect();
        let mut lines: Vec<String> = self.query.lines().map(String::from).collect();
        let mut answer = self.answer.clone();
        let mut options = Vec::with_capacity(order.len());
        for (slot, &src) in order.iter().enumerate() {
            let label = LABELS[slot];
            let text = self.options[src].text.clone();
            lines[positions[slot]] = format!("{label}. {text}");
            if self.options[src].label.to_string() == self.answer {
                answer = label.to_string();
            }
            options.push(McqOption { label, text });
        }
        McqItem {
            query: lines.join("\n"),
            answer,
            source_instance_id: self.source_instance_id.clone(),
            options,
        }
    }
}

/// First JSON object in `reply` with string `query` and `answer` fields,
/// ignoring code fences and surrounding prose.
pub fn extract_mcq_json(reply: &str) -> Option<(String, String)> {
    let pick = |v: &Value| -> Option<(String, String)> {
        Some((
            v.get("query")?.as_str()?.to_string(),
            v.get("answer")?.as_str()?.to_string(),
        ))
    };
    for (i, _) in reply.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&reply[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            if let Some(found) = pick(&v) {
                return Some(found);
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub instance_id: String,
    pub reason: SkipReason,
    pub attempts: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    pub skipped: Vec<SkipRecord>,
    pub counts: BTreeMap<SkipReason, usize>,
}

impl SkipReport {
    fn push(&mut self, rec: SkipRecord) {
        *self.counts.entry(rec.reason).or_default() += 1;
        self.skipped.push(rec);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqOptions {
    /// Extra attempts after the first failed one.
    pub retry_budget: usize,
    /// Shuffle options with this seed; off when `None`.
    pub shuffle_seed: Option<u64>,
}

impl Default for McqOptions {
    fn default() -> Self {
        McqOptions {
            retry_budget: 2,
            shuffle_seed: None,
        }
    }
}

fn raw_content(inst: &CorpusInstance) -> String {
    format!("Question: {}\nAnswer: {}", inst.query, inst.answer)
}

/// Converts one instance, re-asking the generator on invalid output.
pub fn to_mcq(
    instance: &CorpusInstance,
    generator: &dyn Oracle,
    template: &PromptTemplate,
    domain: &str,
    retry_budget: usize,
) -> std::result::Result<McqItem, SkipRecord> {
    let skip = |reason, attempts, detail: String| SkipRecord {
        instance_id: instance.instance_id.clone(),
        reason,
        attempts,
        detail,
    };
    let prompt = template
        .render(&[("domain", domain), ("input_content", &raw_content(instance))])
        .map_err(|e| skip(SkipReason::GeneratorError, 0, e.to_string()))?;
    let mut last = skip(SkipReason::GeneratorError, 0, String::new());
    for attempt in 1..=retry_budget + 1 {
        let (reason, detail) = match generator.complete(&prompt) {
            Err(e) => (SkipReason::GeneratorError, e.to_string()),
            Ok(reply) => match extract_mcq_json(&reply) {
                None => (SkipReason::ParseError, reply),
                Some((query, answer)) => {
                    match McqItem::new(query, &answer, instance.instance_id.clone()) {
                        Ok(item) => return Ok(item),
                        Err(reason) => (reason, reply),
                    }
                }
            },
        };
        log::debug!("{} attempt {attempt}: {reason}", instance.instance_id);
        last = skip(reason, attempt, detail);
    }
    log::warn!("{} skipped: {}", instance.instance_id, last.reason);
    Err(last)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Benchmark {
    pub benchmark_id: String,
    pub requirement: Requirement,
    pub provenance: String,
    pub items: Vec<McqItem>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    benchmark_id: String,
    requirement: Requirement,
    provenance: String,
}

/// Maps [`to_mcq`] over `instances`, keeping their order.
pub fn build_benchmark(
    benchmark_id: &str,
    requirement: &Requirement,
    provenance: &str,
    instances: &[CorpusInstance],
    generator: &dyn Oracle,
    template: &PromptTemplate,
    opts: &McqOptions,
) -> Result<(Benchmark, SkipReport)> {
    if instances.is_empty() {
        return Err(Error::Empty("no instances to convert".into()));
    }
    let results: Vec<_> = instances
        .par_iter()
        .map(|inst| to_mcq(inst, generator, template, &requirement.text, opts.retry_budget))
        .collect();
    let mut report = SkipReport::default();
    let mut items = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(item) => items.push(match opts.shuffle_seed {
                Some(seed) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    item.shuffled(&mut rng)
                }
                None => item,
            }),
            Err(rec) => report.push(rec),
        }
    }
    if items.is_empty() {
        let counts: Vec<String> = report.counts.iter().map(|(r, n)| format!("{r}: {n}")).collect();
        return Err(Error::Empty(format!(
            "every instance was skipped ({})",
            counts.join(", ")
        )));
    }
    Ok((
        Benchmark {
            benchmark_id: benchmark_id.to_string(),
            requirement: requirement.clone(),
            provenance: provenance.to_string(),
            items,
        },
        report,
    ))
}

impl Benchmark {
    pub fn to_file_string(&self) -> String {
        let header = Header {
            benchmark_id: self.benchmark_id.clone(),
            requirement: self.requirement.clone(),
            provenance: self.provenance.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("item serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty benchmark file"))?;
        let header: Header = serde_json::from_str(first)
            .map_err(|e| Error::parse(origin, 1, format!("bad header: {e}")))?;
        let mut items = Vec::new();
        for (i, line) in lines {
            let raw: McqItem = serde_json::from_str(line)
                .map_err(|e| Error::parse(origin, i + 1, format!("bad item: {e}")))?;
            let item = McqItem::new(raw.query, &raw.answer, raw.source_instance_id)
                .map_err(|reason| Error::parse(origin, i + 1, format!("invalid item: {reason}")))?;
            items.push(item);
        }
        if items.is_empty() {
            return Err(Error::parse(origin, 1, "benchmark has no items"));
        }
        Ok(Benchmark {
            benchmark_id: header.benchmark_id,
            requirement: header.requirement,
            provenance: header.provenance,
            items,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_file_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{FnOracle, OracleError, PromptLibrary};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn reply(query: &str, answer: &str) -> String {
        format!(
            "Here you go:\n```json\n{}\n```",
            serde_json::json!({ "query": query, "answer": answer })
        )
    }

    const Q4: &str = "Which ring size?\nA. Three\nB. Six\nC. Five\nD. Four";

    fn inst(id: &str) -> CorpusInstance {
        CorpusInstance {
            instance_id: id.into(),
            query: "What ring forms?".into(),
            answer: "Six-membered".into(),
            source: "t".into(),
        }
    }

    #[test]
    fn valid_reply_passes() {
        let gen = FnOracle::new("g", |_| Ok(reply(Q4, "B")));
        let lib = PromptLibrary::builtin();
        let item = to_mcq(&inst("x"), &gen, &lib.mcq, "chemistry", 2).unwrap();
        assert_eq!(item.options.len(), 4);
        assert_eq!(item.answer, "B");
        assert_eq!(item.options[1].text, "Six");
    }

    #[test]
    fn reason_codes() {
        let cases = [
            (Q4, "F", SkipReason::AnswerLabelOutsideOptions),
            ("Q\nA. x\nB. y\nC. x\nD. z", "A", SkipReason::DuplicateOptions),
            ("Q\nA. x\nB. y\nC. z", "A", SkipReason::OptionCount),
            ("Q\nA. x\nC. y\nB. z\nD. w", "A", SkipReason::LabelSequence),
        ];
        for (q, a, want) in cases {
            assert_eq!(validate_mcq(q, a).unwrap_err(), want, "{q}");
        }
        assert_eq!(validate_mcq("Q\nA) x\nB: y\nC. z\nD. w\nE. v", "(e)").unwrap().len(), 5);
    }

    #[test]
    fn retries_then_skips() {
        let calls = AtomicUsize::new(0);
        let gen = FnOracle::new("g", |_| {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok("no json here".to_string())
        });
        let lib = PromptLibrary::builtin();
        let skip = to_mcq(&inst("x"), &gen, &lib.mcq, "chemistry", 2).unwrap_err();
        assert_eq!(skip.reason, SkipReason::ParseError);
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let calls = AtomicUsize::new(0);
        let flaky = FnOracle::new("g", |_| {
            if calls.fetch_add(1, Ordering::SeqCst) == 0 {
                Err(OracleError::Failed { oracle: "g".into(), message: "x".into() })
            } else {
                Ok(reply(Q4, "C"))
            }
        });
        assert_eq!(to_mcq(&inst("x"), &flaky, &lib.mcq, "c", 2).unwrap().answer, "C");
    }

    #[test]
    fn benchmark_round_trip_and_partial_skip() {
        let gen = FnOracle::new("g", |p| {
            Ok(if p.user.contains("bad") { reply(Q4, "Z") } else { reply(Q4, "A") })
        });
        let lib = PromptLibrary::builtin();
        let mut insts = vec![inst("1"), inst("2"), inst("3")];
        insts[1].query = "bad one".into();
        let req = Requirement::new("r1", "ring chemistry");
        let (bench, report) =
            build_benchmark("b", &req, "manifest.json", &insts, &gen, &lib.mcq, &McqOptions::default()).unwrap();
        assert_eq!(bench.items.len(), 2);
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.counts[&SkipReason::AnswerLabelOutsideOptions], 1);
        let ids: Vec<_> = bench.items.iter().map(|i| i.source_instance_id.as_str()).collect();
        assert_eq!(ids, ["1", "3"]);
        let text = bench.to_file_string();
        assert_eq!(Benchmark::parse(&text, Path::new("b.jsonl")).unwrap(), bench);
    }

    #[test]
    fn all_skipped_is_error() {
        let gen = FnOracle::new("g", |_| Ok(reply(Q4, "Z")));
        let lib = PromptLibrary::builtin();
        let req = Requirement::new("r1", "x");
        let err = build_benchmark("b", &req, "m", &[inst("1")], &gen, &lib.mcq, &McqOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
    }

    #[test]
    fn shuffle_keeps_answer_text() {
        let item = McqItem::new(Q4.into(), "B", "x".into()).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = item.shuffled(&mut rng);
            let ans = s.options.iter().find(|o| o.label.to_string() == s.answer).unwrap();
            assert_eq!(ans.text, "Six");
            assert!(validate_mcq(&s.query, &s.answer).is_ok());
            assert!(s.query.starts_with("Which ring size?"));
        }
    }

    #[test]
    fn json_extraction_tolerates_noise() {
        assert_eq!(
            extract_mcq_json("sure {not json} then {\"query\": \"q\", \"answer\": \"A\"} bye"),
            Some(("q".into(), "A".into()))
        );
        assert_eq!(extract_mcq_json("{\"query\": 1}"), None);
    }
}
