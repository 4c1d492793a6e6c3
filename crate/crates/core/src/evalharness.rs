//! Administering benchmarks and comparing model rankings.
//!
//! Accuracy files hold `model<TAB>accuracy` lines. Recorded-replies files
//! hold one reply per line, aligned with benchmark items; replies may use
//! `\n` escapes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::benchgen::Benchmark;
use crate::oracles::{unescape_reply, Oracle, PromptTemplate};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemResult {
    pub reply: String,
    pub parsed: Option<char>,
    pub correct: bool,
    /// The model call failed; the item counts as incorrect.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub model_name: String,
    pub per_item: Vec<ItemResult>,
    pub accuracy: f64,
}

static LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([A-E])\b").unwrap());

/// First standalone option letter in a reply.
pub fn parse_choice(reply: &str) -> Option<char> {
    LETTER
        .captures(reply)
        .and_then(|c| c[1].chars().next())
}

fn score(model_name: &str, bench: &Benchmark, replies: Vec<(String, bool)>) -> ModelRun {
    let per_item: Vec<ItemResult> = bench
        .items
        .iter()
        .zip(replies)
        .map(|(item, (reply, failed))| {
            let parsed = if failed { None } else { parse_choice(&reply) };
            ItemResult {
                correct: parsed.is_some_and(|c| item.answer.starts_with(c)),
                reply,
                parsed,
                failed,
            }
        })
        .collect();
    let correct = per_item.iter().filter(|r| r.correct).count();
    ModelRun {
        model_name: model_name.to_string(),
        accuracy: correct as f64 / per_item.len().max(1) as f64,
        per_item,
    }
}

/// Poses every item once to `model` through the answer wrapper.
pub fn administer(bench: &Benchmark, model: &dyn Oracle, wrapper: &PromptTemplate) -> Result<ModelRun> {
    let replies: Vec<(String, bool)> = bench
        .items
        .par_iter()
        .map(|item| {
            let prompt = wrapper.render(&[("question", &item.query)])?;
            Ok(match model.complete(&prompt) {
                Ok(r) => (r, false),
                Err(e) => {
                    log::warn!("{}: item {} failed: {e}", model.name(), item.source_instance_id);
                    (e.to_string(), true)
                }
            })
        })
        .collect::<Result<_>>()?;
    Ok(score(model.name(), bench, replies))
}

/// Scores a recorded-replies file.
pub fn administer_recorded(bench: &Benchmark, model_name: &str, replies_text: &str) -> Result<ModelRun> {
    let replies: Vec<(String, bool)> = replies_text.lines().map(|l| (unescape_reply(l), false)).collect();
    if replies.len() != bench.items.len() {
        return Err(Error::Validation(format!(
            "{model_name}: {} replies for {} items",
            replies.len(),
            bench.items.len()
        )));
    }
    Ok(score(model_name, bench, replies))
}

/// Average ranks, highest value first; ties share the mean position.
pub fn tied_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// A correlation value; `degenerate` marks an all-tie input reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!("rank vectors differ in length ({} vs {})", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::Validation("need at least two ranked models".into()));
    }
    Ok(())
}

/// Pearson correlation of two rank vectors.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Correlation> {
    check_lengths(a, b)?;
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(Correlation { value: 0.0, degenerate: true });
    }
    Ok(Correlation {
        value: (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Σ t(t−1)/2 over runs of equal values in a sorted slice.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort counting inversions.
fn count_swaps(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = count_swaps(&mut v[..mid], buf) + count_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall τ_b in O(n log n) (Knight's algorithm).
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> Result<Correlation> {
    check_lengths(a, b)?;
    let n = a.len() as u64;
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    let n0 = n * (n - 1) / 2;
    let ties_a = tied_pairs(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let ties_ab = tied_pairs(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = count_swaps(&mut ys, &mut buf);
    let ties_b = tied_pairs(&ys);
    let denom = (((n0 - ties_a) as f64) * ((n0 - ties_b) as f64)).sqrt();
    if denom == 0.0 {
        return Ok(Correlation { value: 0.0, degenerate: true });
    }
    // concordant − discordant
    let s = n0 as i64 - ties_a as i64 - ties_b as i64 + ties_ab as i64 - 2 * swaps as i64;
    Ok(Correlation {
        value: (s as f64 / denom).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub accuracy: f64,
    pub rank: f64,
    pub reference_accuracy: f64,
    pub reference_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub reference_name: String,
    pub rows: Vec<ModelRow>,
    pub spearman: Correlation,
    pub kendall_tau_b: Correlation,
}

/// Compares benchmark accuracies with reference accuracies.
pub fn consistency_report(
    accuracies: &BTreeMap<String, f64>,
    reference: &BTreeMap<String, f64>,
    reference_name: &str,
) -> Result<RankingReport> {
    let missing_ref: Vec<&str> = accuracies.keys().filter(|m| !reference.contains_key(*m)).map(String::as_str).collect();
    let missing_run: Vec<&str> = reference.keys().filter(|m| !accuracies.contains_key(*m)).map(String::as_str).collect();
    if !missing_ref.is_empty() || !missing_run.is_empty() {
        return Err(Error::Validation(format!(
            "model sets differ: missing from reference {missing_ref:?}, missing from runs {missing_run:?}"
        )));
    }
    let models: Vec<&String> = accuracies.keys().collect();
    let acc: Vec<f64> = models.iter().map(|m| accuracies[*m]).collect();
    let refs: Vec<f64> = models.iter().map(|m| reference[*m]).collect();
    let (ra, rb) = (tied_ranks(&acc), tied_ranks(&refs));
    let mut rows: Vec<ModelRow> = models
        .iter()
        .enumerate()
        .map(|(i, m)| ModelRow {
            model: m.to_string(),
            accuracy: acc[i],
            rank: ra[i],
            reference_accuracy: refs[i],
            reference_rank: rb[i],
        })
        .collect();
    rows.sort_by(|x, y| x.rank.total_cmp(&y.rank).then_with(|| x.model.cmp(&y.model)));
    Ok(RankingReport {
        reference_name: reference_name.to_string(),
        spearman: spearman(&ra, &rb)?,
        kendall_tau_b: kendall_tau_b(&ra, &rb)?,
        rows,
    })
}

impl RankingReport {
    pub fn to_table(&self) -> String {
        let w = self.rows.iter().map(|r| r.model.chars().count()).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<w$}  {:>8} {:>6}  {:>8} {:>6}", "model", "accuracy", "rank", "ref acc", "ref rk");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$}  {:>8.4} {:>6.1}  {:>8.4} {:>6.1}",
                r.model, r.accuracy, r.rank, r.reference_accuracy, r.reference_rank
            );
        }
        let flag = |c: &Correlation| if c.degenerate { " (degenerate)" } else { "" };
        let _ = writeln!(s, "reference: {}", self.reference_name);
        let _ = writeln!(s, "Spearman  {:>7.4}{}", self.spearman.value, flag(&self.spearman));
        let _ = writeln!(s, "Kendall   {:>7.4}{}", self.kendall_tau_b.value, flag(&self.kendall_tau_b));
        s
    }
}

pub fn parse_accuracy_file(text: &str, origin: &Path) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (model, acc) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(origin, i + 1, "expected model<TAB>accuracy"))?;
        let acc: f64 = acc
            .trim()
            .parse()
            .map_err(|_| Error::parse(origin, i + 1, format!("bad accuracy {acc:?}")))?;
        if !acc.is_finite() {
            return Err(Error::parse(origin, i + 1, "accuracy must be finite"));
        }
        if out.insert(model.trim().to_string(), acc).is_some() {
            return Err(Error::parse(origin, i + 1, format!("duplicate model {model}")));
        }
    }
    Ok(out)
}

pub fn load_accuracy_file(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_accuracy_file(&text, path)
}

pub fn accuracy_file_string(accuracies: &BTreeMap<String, f64>) -> String {
    accuracies.iter().map(|(m, a)| format!("{m}\t{a}\n")).collect()
}
