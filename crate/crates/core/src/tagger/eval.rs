use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{normalized_indel_similarity, TagPrediction};
use crate::{Error, Result};

/// Gold unit names for one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldTags {
    pub instance_id: String,
    pub names: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl UnitCounts {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerScorecard {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_unit_counts: BTreeMap<String, UnitCounts>,
}

/// One-to-one matching: pairs with similarity strictly above `threshold`,
/// taken in descending similarity order (ties by row, then column).
pub fn greedy_match(sim: &[Vec<f64>], threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = sim
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &s)| (s, i, j)))
        .filter(|&(s, _, _)| s > threshold)
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_rows = BTreeSet::new();
    let mut used_cols = BTreeSet::new();
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_rows.contains(&i) && !used_cols.contains(&j) {
            used_rows.insert(i);
            used_cols.insert(j);
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

/// Fuzzy-matched macro/micro F1 of predicted units against gold names.
///
/// Predicted unit ids are mapped through `unit_names` (unknown ids are
/// compared verbatim). Similarity is computed on lowercased names.
pub fn evaluate_tagger(
    predictions: &[TagPrediction],
    gold: &[GoldTags],
    unit_names: &BTreeMap<String, String>,
    threshold: f64,
) -> Result<TaggerScorecard> {
    if predictions.len() != gold.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} gold instances",
            predictions.len(),
            gold.len()
        )));
    }
    let mut counts: BTreeMap<String, UnitCounts> = BTreeMap::new();
    let mut gold_units = BTreeSet::new();
    for (p, g) in predictions.iter().zip(gold) {
        if p.instance_id != g.instance_id {
            return Err(Error::Validation(format!(
                "misaligned instances: prediction {} vs gold {}",
                p.instance_id, g.instance_id
            )));
        }
        let pred: Vec<&str> = p
            .units
            .iter()
            .map(|u| unit_names.get(u).map(String::as_str).unwrap_or(u))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let gold_names: Vec<&str> = g.names.iter().map(String::as_str).collect();
        let sim: Vec<Vec<f64>> = pred
            .iter()
            .map(|a| {
                gold_names
                    .iter()
                    .map(|b| normalized_indel_similarity(&a.to_lowercase(), &b.to_lowercase()))
                    .collect()
            })
            .collect();
        let matched = greedy_match(&sim, threshold);
        let hit_pred: BTreeSet<usize> = matched.iter().map(|m| m.0).collect();
        let hit_gold: BTreeSet<usize> = matched.iter().map(|m| m.1).collect();
        for (j, name) in gold_names.iter().enumerate() {
            gold_units.insert(name.to_string());
            let c = counts.entry(name.to_string()).or_default();
            if hit_gold.contains(&j) {
                c.tp += 1;
            } else {
                c.fn_ += 1;
            }
        }
        for (i, name) in pred.iter().enumerate() {
            if !hit_pred.contains(&i) {
                counts.entry(name.to_string()).or_default().fp += 1;
            }
        }
    }
    let total = counts.values().fold(UnitCounts::default(), |acc, c| UnitCounts {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
    });
    let macro_f1 = if gold_units.is_empty() {
        0.0
    } else {
        gold_units.iter().map(|u| counts[u].f1()).sum::<f64>() / gold_units.len() as f64
    };
    Ok(TaggerScorecard {
        macro_f1,
        micro_f1: total.f1(),
        per_unit_counts: counts,
    })
}

impl TaggerScorecard {
    pub fn to_table(&self) -> String {
        let width = self
            .per_unit_counts
            .keys()
            .map(|k| k.chars().count())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>5} {:>5} {:>5} {:>6}", "unit", "tp", "fp", "fn", "f1");
        for (unit, c) in &self.per_unit_counts {
            let _ = writeln!(
                s,
                "{unit:<width$}  {:>5} {:>5} {:>5} {:>6.3}",
                c.tp,
                c.fp,
                c.fn_,
                c.f1()
            );
        }
        let _ = writeln!(s, "macro F1 {:.4}  micro F1 {:.4}", self.macro_f1, self.micro_f1);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pred(id: &str, units: &[&str]) -> TagPrediction {
        TagPrediction {
            instance_id: id.into(),
            units: units.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn gold(id: &str, names: &[&str]) -> GoldTags {
        GoldTags {
            instance_id: id.into(),
            names: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Lexicographically largest sorted similarity vector over all
    /// one-to-one assignments.
    fn exhaustive(sim: &[Vec<f64>], threshold: f64) -> Vec<(usize, usize)> {
        fn rec(
            sim: &[Vec<f64>],
            t: f64,
            i: usize,
            used: &mut Vec<bool>,
            cur: &mut Vec<(usize, usize)>,
            best: &mut (Vec<f64>, Vec<(usize, usize)>),
        ) {
            if i == sim.len() {
                let mut v: Vec<f64> = cur.iter().map(|&(a, b)| sim[a][b]).collect();
                v.sort_by(|a, b| b.total_cmp(a));
                if v > best.0 {
                    *best = (v, cur.clone());
                }
                return;
            }
            rec(sim, t, i + 1, used, cur, best);
            for j in 0..used.len() {
                if !used[j] && sim[i][j] > t {
                    used[j] = true;
                    cur.push((i, j));
                    rec(sim, t, i + 1, used, cur, best);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let cols = sim.first().map_or(0, Vec::len);
        let mut best = (vec![], vec![]);
        rec(sim, threshold, 0, &mut vec![false; cols], &mut vec![], &mut best);
        let mut m = best.1;
        m.sort_unstable();
        m
    }

    #[test]
    fn identical_predictions_score_one() {
        let names: BTreeMap<String, String> =
            [("u1", "Alpha"), ("u2", "Beta")].iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        let preds: Vec<_> = (0..10).map(|i| pred(&i.to_string(), &["u1", "u2"])).collect();
        let golds: Vec<_> = (0..10).map(|i| gold(&i.to_string(), &["Alpha", "Beta"])).collect();
        let s = evaluate_tagger(&preds, &golds, &names, 85.0).unwrap();
        assert_eq!((s.macro_f1, s.micro_f1), (1.0, 1.0));
    }

    #[test]
    fn empty_predictions_score_zero() {
        let preds: Vec<_> = (0..4).map(|i| pred(&i.to_string(), &[])).collect();
        let golds: Vec<_> = (0..4).map(|i| gold(&i.to_string(), &["Alpha"])).collect();
        let s = evaluate_tagger(&preds, &golds, &BTreeMap::new(), 85.0).unwrap();
        assert_eq!(s.micro_f1, 0.0);
        assert_eq!(s.per_unit_counts["Alpha"], UnitCounts { tp: 0, fp: 0, fn_: 4 });
    }

    #[test]
    fn fuzzy_match_is_strictly_above_threshold() {
        // "abcdefghij" vs "abcdefghix": 2·9/20 = 90
        let s = evaluate_tagger(
            &[pred("a", &["abcdefghij"])],
            &[gold("a", &["abcdefghix"])],
            &BTreeMap::new(),
            90.0,
        )
        .unwrap();
        assert_eq!(s.micro_f1, 0.0);
        let s = evaluate_tagger(
            &[pred("a", &["abcdefghij"])],
            &[gold("a", &["abcdefghix"])],
            &BTreeMap::new(),
            85.0,
        )
        .unwrap();
        assert_eq!(s.micro_f1, 1.0);
    }

    #[test]
    fn gold_tag_consumed_once() {
        let s = evaluate_tagger(
            &[pred("a", &["Cyclization", "Cyclisation"])],
            &[gold("a", &["Cyclization"])],
            &BTreeMap::new(),
            85.0,
        )
        .unwrap();
        assert_eq!(s.per_unit_counts["Cyclization"].tp, 1);
        assert_eq!(s.per_unit_counts["Cyclisation"].fp, 1);
    }

    #[test]
    fn misaligned_ids_rejected() {
        assert!(evaluate_tagger(&[pred("a", &[])], &[gold("b", &[])], &BTreeMap::new(), 85.0).is_err());
        assert!(evaluate_tagger(&[], &[gold("b", &[])], &BTreeMap::new(), 85.0).is_err());
    }

    proptest! {
        #[test]
        fn greedy_equals_exhaustive_on_distinct_similarities(
            rows in 1usize..=4, cols in 1usize..=4, seed in any::<u64>()
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut vals: Vec<f64> = (0..rows * cols).map(|k| 60.0 + 2.5 * k as f64).collect();
            vals.shuffle(&mut rng);
            let sim: Vec<Vec<f64>> = vals.chunks(cols).map(|c| c.to_vec()).collect();
            prop_assert_eq!(greedy_match(&sim, 85.0), exhaustive(&sim, 85.0));
        }

        #[test]
        fn f1_bounded(
            p in proptest::collection::vec(proptest::collection::btree_set("[a-c]{1,3}", 0..4), 1..8),
            g in proptest::collection::vec(proptest::collection::btree_set("[a-c]{1,3}", 0..4), 1..8),
        ) {
            let n = p.len().min(g.len());
            let preds: Vec<_> = (0..n).map(|i| TagPrediction { instance_id: i.to_string(), units: p[i].clone() }).collect();
            let golds: Vec<_> = (0..n).map(|i| GoldTags { instance_id: i.to_string(), names: g[i].clone() }).collect();
            let s = evaluate_tagger(&preds, &golds, &BTreeMap::new(), 85.0).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.macro_f1));
            prop_assert!((0.0..=1.0).contains(&s.micro_f1));
            let perfect = evaluate_tagger(&preds, &preds.iter().map(|p| GoldTags { instance_id: p.instance_id.clone(), names: p.units.clone() }).collect::<Vec<_>>(), &BTreeMap::new(), 85.0).unwrap();
            if perfect.per_unit_counts.values().any(|c| c.tp > 0) {
                prop_assert_eq!(perfect.micro_f1, 1.0);
                prop_assert_eq!(perfect.macro_f1, 1.0);
            }
        }
    }
}
