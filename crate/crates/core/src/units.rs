//! Knowledge-unit selection by depth-first traversal of the ontology.
//!
//! At each visited node: fewer than `min_descendants` descendants means
//! backtrack without asking the classifier; otherwise the classifier labels
//! the term. Coarse recurses into the children, moderate adds the node as a
//! unit and backtracks (unless `recurse_after_moderate`), fine backtracks.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TagIndex;
use crate::error::{Error, Result};
use crate::ontology::{KeywordSet, OntologyGraph};
use crate::oracles::{classify_granularity, GranularityLabel, Oracle, PromptTemplate};
use crate::NON_SCIENTIFIC;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeUnit {
    pub unit_id: String,
    pub name: String,
    pub source_graph: String,
}

impl KnowledgeUnit {
    pub fn new(graph_id: &str, node_id: &str, name: &str) -> Self {
        KnowledgeUnit {
            unit_id: format!("{graph_id}:{node_id}"),
            name: name.to_string(),
            source_graph: graph_id.to_string(),
        }
    }

    pub fn non_scientific() -> Self {
        KnowledgeUnit {
            unit_id: NON_SCIENTIFIC.to_string(),
            name: "Non-Scientific".to_string(),
            source_graph: "builtin".to_string(),
        }
    }

    pub fn is_non_scientific(&self) -> bool {
        self.unit_id == NON_SCIENTIFIC
    }

    /// Ontology node id, for units drawn from a graph.
    pub fn node_id(&self) -> Option<&str> {
        self.unit_id
            .strip_prefix(self.source_graph.as_str())
            .and_then(|rest| rest.strip_prefix(':'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// Too few descendants; never shown to the classifier.
    PrunedSmall,
    Coarse,
    Moderate,
    Fine,
    /// Classifier failed; treated as fine.
    ClassifierError(String),
}

impl Decision {
    pub fn was_classified(&self) -> bool {
        !matches!(self, Decision::PrunedSmall)
    }

    fn code(&self) -> &'static str {
        match self {
            Decision::PrunedSmall => "pruned_small",
            Decision::Coarse => "coarse",
            Decision::Moderate => "moderate",
            Decision::Fine => "fine",
            Decision::ClassifierError(_) => "classifier_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub graph_id: String,
    pub node_id: String,
    /// The node whose expansion reached this one; `None` for roots.
    pub via: Option<String>,
    pub descendant_count: usize,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UnitSet {
    pub units: Vec<KnowledgeUnit>,
    pub selection_log: Vec<TraceEntry>,
}

#[derive(Debug, Clone)]
pub struct SelectionOptions {
    pub min_descendants: usize,
    pub recurse_after_moderate: bool,
    /// Classifier attempts per node when replies do not parse.
    pub attempts: u32,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            min_descendants: 10,
            recurse_after_moderate: false,
            attempts: 3,
        }
    }
}

fn traverse(
    graph: &OntologyGraph,
    classifier: &dyn Oracle,
    template: &PromptTemplate,
    opts: &SelectionOptions,
) -> (Vec<KnowledgeUnit>, Vec<TraceEntry>) {
    let mut units = Vec::new();
    let mut trace = Vec::new();
    let mut visited: HashSet<usize> = HashSet::new();
    let mut stack: Vec<(usize, Option<usize>)> =
        graph.root_positions().iter().rev().map(|&r| (r, None)).collect();

    while let Some((pos, via)) = stack.pop() {
        if !visited.insert(pos) {
            continue;
        }
        let node = graph.node_at(pos);
        let descendant_count = graph.descendant_positions(pos).len();
        let decision = if descendant_count < opts.min_descendants {
            Decision::PrunedSmall
        } else {
            match classify_granularity(classifier, template, &node.name, opts.attempts) {
                Ok(GranularityLabel::Coarse) => Decision::Coarse,
                Ok(GranularityLabel::Moderate) => Decision::Moderate,
                Ok(GranularityLabel::Fine) => Decision::Fine,
                Err(e) => {
                    log::warn!(
                        "classifier failed on {}:{}; pruning: {e}",
                        graph.graph_id(),
                        node.id
                    );
                    Decision::ClassifierError(e.to_string())
                }
            }
        };

        let descend = match decision {
            Decision::Coarse => true,
            Decision::Moderate => {
                units.push(KnowledgeUnit::new(graph.graph_id(), &node.id, &node.name));
                opts.recurse_after_moderate
            }
            _ => false,
        };
        if descend {
            for &child in graph.children_at(pos).iter().rev() {
                if !visited.contains(&child) {
                    stack.push((child, Some(pos)));
                }
            }
        }
        trace.push(TraceEntry {
            graph_id: graph.graph_id().to_string(),
            node_id: node.id.clone(),
            via: via.map(|v| graph.node_at(v).id.clone()),
            descendant_count,
            decision,
        });
    }
    (units, trace)
}

/// Runs the traversal over every graph and appends the non-scientific unit.
///
/// Graphs are traversed concurrently; output order follows `graphs`.
pub fn select_units(
    graphs: &[OntologyGraph],
    classifier: &dyn Oracle,
    template: &PromptTemplate,
    opts: &SelectionOptions,
) -> UnitSet {
    let per_graph: Vec<_> = graphs
        .par_iter()
        .map(|g| traverse(g, classifier, template, opts))
        .collect();
    let mut set = UnitSet::default();
    for (units, trace) in per_graph {
        set.units.extend(units);
        set.selection_log.extend(trace);
    }
    set.units.push(KnowledgeUnit::non_scientific());
    set
}

impl UnitSet {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn get(&self, unit_id: &str) -> Option<&KnowledgeUnit> {
        self.units.iter().find(|u| u.unit_id == unit_id)
    }

    pub fn scientific(&self) -> impl Iterator<Item = &KnowledgeUnit> {
        self.units.iter().filter(|u| !u.is_non_scientific())
    }

    pub fn names(&self) -> BTreeMap<String, String> {
        self.units
            .iter()
            .map(|u| (u.unit_id.clone(), u.name.clone()))
            .collect()
    }

    /// `unit_id<TAB>name<TAB>source_graph` lines.
    pub fn to_units_file(&self) -> String {
        let mut out = String::new();
        for u in &self.units {
            let _ = writeln!(out, "{}\t{}\t{}", u.unit_id, u.name, u.source_graph);
        }
        out
    }

    /// `graph_id<TAB>node_id<TAB>via<TAB>descendants<TAB>decision[<TAB>detail]`.
    pub fn to_trace_file(&self) -> String {
        let mut out = String::from("# graph_id\tnode_id\tvia\tdescendants\tdecision\n");
        for t in &self.selection_log {
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                t.graph_id,
                t.node_id,
                t.via.as_deref().unwrap_or("-"),
                t.descendant_count,
                t.decision.code()
            );
            if let Decision::ClassifierError(msg) = &t.decision {
                let _ = write!(out, "\t{}", msg.replace(['\t', '\n'], " "));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_units_file(text: &str, origin: &Path) -> Result<Self> {
        let mut units: Vec<KnowledgeUnit> = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [unit_id, name, source_graph] = fields[..] else {
                return Err(Error::parse(origin, lineno, "expected unit_id<TAB>name<TAB>source_graph"));
            };
            if !seen.insert(unit_id.to_string()) {
                return Err(Error::parse(origin, lineno, format!("duplicate unit {unit_id}")));
            }
            units.push(KnowledgeUnit {
                unit_id: unit_id.to_string(),
                name: name.to_string(),
                source_graph: source_graph.to_string(),
            });
        }
        if !units.iter().any(KnowledgeUnit::is_non_scientific) {
            return Err(Error::Validation(format!(
                "{}: unit set lacks {NON_SCIENTIFIC}",
                origin.display()
            )));
        }
        Ok(UnitSet {
            units,
            selection_log: Vec::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_units_file(&text, path)
    }
}

/// Keyword sets for every unit. The non-scientific unit gets an empty set.
pub fn keyword_sets(
    units: &UnitSet,
    graphs: &[OntologyGraph],
) -> Result<BTreeMap<String, KeywordSet>> {
    let by_id: BTreeMap<&str, &OntologyGraph> = graphs.iter().map(|g| (g.graph_id(), g)).collect();
    let mut out = BTreeMap::new();
    for unit in &units.units {
        let set = if unit.is_non_scientific() {
            KeywordSet {
                unit_id: unit.unit_id.clone(),
                keywords: Default::default(),
            }
        } else {
            let graph = by_id.get(unit.source_graph.as_str()).ok_or_else(|| Error::Unknown {
                kind: "ontology graph",
                id: unit.source_graph.clone(),
            })?;
            let node = unit.node_id().ok_or_else(|| {
                Error::Validation(format!("unit id {} does not name a node", unit.unit_id))
            })?;
            graph.keyword_set(node, &unit.unit_id)?
        };
        out.insert(unit.unit_id.clone(), set);
    }
    Ok(out)
}

/// Instance count per unit; every unit in the set appears, possibly with 0.
pub fn unit_frequencies(index: &TagIndex, units: &UnitSet) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> =
        units.units.iter().map(|u| (u.unit_id.clone(), 0)).collect();
    for (unit, postings) in index.unit_postings() {
        *counts.entry(unit.clone()).or_default() += postings.len();
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::parse_ontology;
    use crate::oracles::{FnOracle, OracleError, PromptLibrary};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn chain(n: usize) -> OntologyGraph {
        let mut text = String::from("n0\tNode 0\t\n");
        for i in 1..n {
            text.push_str(&format!("n{i}\tNode {i}\tn{}\n", i - 1));
        }
        parse_ontology("chain", &text, Path::new("chain.tsv")).unwrap()
    }

    fn term_of(p: &crate::oracles::Prompt) -> String {
        p.user
            .rsplit("term: ")
            .next()
            .unwrap()
            .trim_end_matches('.')
            .to_string()
    }

    #[test]
    fn chain_of_twelve_coarse_then_moderate() {
        let lib = PromptLibrary::builtin();
        let g = chain(12);
        let classifier = FnOracle::new("c", |p| {
            Ok(match term_of(p).as_str() {
                "Node 0" => "(too coarse)".into(),
                "Node 1" => "(moderate)".into(),
                other => panic!("classifier consulted for {other}"),
            })
        });
        let set = select_units(&[g], &classifier, &lib.granularity, &SelectionOptions::default());
        let ids: Vec<&str> = set.units.iter().map(|u| u.unit_id.as_str()).collect();
        assert_eq!(ids, vec!["chain:n1", NON_SCIENTIFIC]);
        assert_eq!(set.selection_log.len(), 2);
    }

    #[test]
    fn small_subtrees_never_reach_the_classifier() {
        let lib = PromptLibrary::builtin();
        // root with 9 descendants
        let g = chain(10);
        let calls = AtomicUsize::new(0);
        let classifier = FnOracle::new("c", |_| {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok("(too coarse)".into())
        });
        let set = select_units(&[g], &classifier, &lib.granularity, &SelectionOptions::default());
        assert_eq!(calls.load(Ordering::SeqCst), 0);
        assert_eq!(set.selection_log[0].decision, Decision::PrunedSmall);
        assert_eq!(set.selection_log[0].descendant_count, 9);
        assert_eq!(set.units.len(), 1);
    }

    #[test]
    fn classifier_error_prunes() {
        let lib = PromptLibrary::builtin();
        let classifier = FnOracle::new("c", |_| {
            Err(OracleError::Failed {
                oracle: "c".into(),
                message: "down".into(),
            })
        });
        let set = select_units(&[chain(15)], &classifier, &lib.granularity, &SelectionOptions::default());
        assert!(matches!(set.selection_log[0].decision, Decision::ClassifierError(_)));
        assert_eq!(set.selection_log.len(), 1);
        assert_eq!(set.units, vec![KnowledgeUnit::non_scientific()]);
    }

    #[test]
    fn empty_graph_list_yields_only_sentinel() {
        let lib = PromptLibrary::builtin();
        let classifier = FnOracle::new("c", |_| Ok("(moderate)".into()));
        let set = select_units(&[], &classifier, &lib.granularity, &SelectionOptions::default());
        assert_eq!(set.units, vec![KnowledgeUnit::non_scientific()]);
    }

    #[test]
    fn recurse_after_moderate_continues_below() {
        let lib = PromptLibrary::builtin();
        let classifier = FnOracle::new("c", |_| Ok("(moderate)".into()));
        let opts = SelectionOptions {
            recurse_after_moderate: true,
            ..Default::default()
        };
        let set = select_units(&[chain(13)], &classifier, &lib.granularity, &opts);
        // nodes 0..=2 have >= 10 descendants
        assert_eq!(set.units.len(), 4);
        let terminal = select_units(&[chain(13)], &classifier, &lib.granularity, &SelectionOptions::default());
        assert_eq!(terminal.units.len(), 2);
    }

    #[test]
    fn shared_child_is_classified_once() {
        let lib = PromptLibrary::builtin();
        // R -> {A, B}; S is a child of both A and B and has 10 leaf children.
        let mut text = String::from("R\tRoot\t\nA\tLeft\tR\nB\tRight\tR\nS\tShared\tA,B\n");
        for i in 0..10 {
            text.push_str(&format!("L{i}\tLeaf {i}\tS\n"));
        }
        let g = parse_ontology("g", &text, Path::new("g.tsv")).unwrap();
        let seen = Mutex::new(Vec::new());
        let classifier = FnOracle::new("c", |p| {
            let term = term_of(p);
            seen.lock().unwrap().push(term.clone());
            Ok(if term == "Shared" { "(moderate)" } else { "(too coarse)" }.into())
        });
        let set = select_units(&[g], &classifier, &lib.granularity, &SelectionOptions::default());
        let seen = seen.into_inner().unwrap();
        assert_eq!(seen, vec!["Root", "Left", "Shared", "Right"]);
        assert_eq!(set.units.len(), 2);
        let shared = set.selection_log.iter().find(|t| t.node_id == "S").unwrap();
        assert_eq!(shared.via.as_deref(), Some("A"));
    }

    #[test]
    fn units_file_round_trip() {
        let set = UnitSet {
            units: vec![
                KnowledgeUnit::new("chem", "GO:1", "Cyclization"),
                KnowledgeUnit::non_scientific(),
            ],
            selection_log: vec![],
        };
        let back = UnitSet::parse_units_file(&set.to_units_file(), Path::new("u.tsv")).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.units[0].node_id(), Some("GO:1"));
    }

    #[test]
    fn units_file_requires_sentinel() {
        assert!(UnitSet::parse_units_file("g:a\tA\tg\n", Path::new("u.tsv")).is_err());
    }

    #[test]
    fn frequencies_count_tagged_instances() {
        use std::collections::BTreeSet;
        let units = UnitSet {
            units: vec![
                KnowledgeUnit::new("g", "1", "One"),
                KnowledgeUnit::new("g", "2", "Two"),
                KnowledgeUnit::new("g", "3", "Three"),
                KnowledgeUnit::non_scientific(),
            ],
            selection_log: vec![],
        };
        let set = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        let index = TagIndex::from_entries(
            [
                ("d1".to_string(), set(&["g:1"])),
                ("d2".to_string(), set(&["g:1", "g:2"])),
                ("d3".to_string(), set(&[NON_SCIENTIFIC])),
            ]
            .into_iter()
            .collect(),
            Default::default(),
        );
        let f = unit_frequencies(&index, &units);
        assert_eq!(f["g:1"], 2);
        assert_eq!(f["g:2"], 1);
        assert_eq!(f["g:3"], 0);
        let empty = unit_frequencies(&TagIndex::default(), &units);
        assert!(empty.values().all(|&c| c == 0));
        assert_eq!(empty.len(), 4);
    }
}
