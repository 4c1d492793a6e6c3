//! Scientific ontology graphs: loading, validation and descendant queries.
//!
//! One file holds one graph. Each non-comment line is
//! `node_id<TAB>name<TAB>parent_id1,parent_id2,...`; an empty (or missing)
//! parent field marks a root. Edges point child to parent (is-a), so the
//! descendants of a node are its transitive children.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyNode {
    pub id: String,
    pub name: String,
    pub parent_ids: Vec<String>,
}

/// A validated, immutable is-a DAG.
#[derive(Debug, Clone)]
pub struct OntologyGraph {
    graph_id: String,
    nodes: Vec<OntologyNode>,
    index: HashMap<String, usize>,
    /// Children per node, in file order of the child.
    children: Vec<Vec<usize>>,
    roots: Vec<usize>,
}

/// The lowercased names of every strict descendant of a unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub unit_id: String,
    pub keywords: BTreeSet<String>,
}

impl KeywordSet {
    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }
}

impl OntologyGraph {
    /// Builds and validates a graph from nodes given in file order.
    pub fn from_nodes(graph_id: impl Into<String>, nodes: Vec<OntologyNode>) -> Result<Self> {
        let graph_id = graph_id.into();
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if node.name.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "graph {graph_id}: node {} has an empty name",
                    node.id
                )));
            }
            if index.insert(node.id.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "graph {graph_id}: duplicate node id {}",
                    node.id
                )));
            }
        }

        let mut children = vec![Vec::new(); nodes.len()];
        let mut roots = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            if node.parent_ids.is_empty() {
                roots.push(i);
            }
            for parent in &node.parent_ids {
                let &p = index.get(parent).ok_or_else(|| {
                    Error::Validation(format!(
                        "graph {graph_id}: node {} references unknown parent {parent}",
                        node.id
                    ))
                })?;
                if !children[p].contains(&i) {
                    children[p].push(i);
                }
            }
        }

        let graph = OntologyGraph {
            graph_id,
            nodes,
            index,
            children,
            roots,
        };
        if let Some(cycle) = graph.find_cycle() {
            return Err(Error::Cycle(cycle));
        }
        if graph.roots.is_empty() {
            return Err(Error::Validation(format!(
                "graph {} has no root",
                graph.graph_id
            )));
        }
        Ok(graph)
    }

    pub fn graph_id(&self) -> &str {
        &self.graph_id
    }

    pub fn nodes(&self) -> &[OntologyNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    pub fn root_ids(&self) -> impl Iterator<Item = &str> {
        self.roots.iter().map(|&i| self.nodes[i].id.as_str())
    }

    pub fn node(&self, id: &str) -> Option<&OntologyNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub(crate) fn position(&self, id: &str) -> Result<usize> {
        self.index.get(id).copied().ok_or_else(|| Error::Unknown {
            kind: "ontology node",
            id: format!("{}:{id}", self.graph_id),
        })
    }

    pub(crate) fn node_at(&self, pos: usize) -> &OntologyNode {
        &self.nodes[pos]
    }

    pub(crate) fn children_at(&self, pos: usize) -> &[usize] {
        &self.children[pos]
    }

    pub(crate) fn root_positions(&self) -> &[usize] {
        &self.roots
    }

    /// Child ids of `id` in file order.
    pub fn children(&self, id: &str) -> Result<Vec<&str>> {
        let pos = self.position(id)?;
        Ok(self.children[pos]
            .iter()
            .map(|&c| self.nodes[c].id.as_str())
            .collect())
    }

    pub(crate) fn descendant_positions(&self, pos: usize) -> Vec<usize> {
        let mut seen = vec![false; self.nodes.len()];
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.children[pos].iter().rev().copied().collect();
        while let Some(n) = stack.pop() {
            if seen[n] {
                continue;
            }
            seen[n] = true;
            out.push(n);
            stack.extend(self.children[n].iter().rev());
        }
        out
    }

    /// All strict descendants of `node_id`; shared descendants appear once.
    pub fn descendants(&self, node_id: &str) -> Result<BTreeSet<String>> {
        let pos = self.position(node_id)?;
        Ok(self
            .descendant_positions(pos)
            .into_iter()
            .map(|d| self.nodes[d].id.clone())
            .collect())
    }

    pub fn descendant_count(&self, node_id: &str) -> Result<usize> {
        let pos = self.position(node_id)?;
        Ok(self.descendant_positions(pos).len())
    }

    /// Keyword set of a unit: lowercased, deduplicated descendant names.
    pub fn keyword_set(&self, node_id: &str, unit_id: &str) -> Result<KeywordSet> {
        let pos = self.position(node_id)?;
        let keywords: BTreeSet<String> = self
            .descendant_positions(pos)
            .into_iter()
            .map(|d| self.nodes[d].name.to_lowercase())
            .collect();
        if keywords.is_empty() {
            log::warn!("unit {unit_id} has no descendants; its keyword set is empty");
        }
        Ok(KeywordSet {
            unit_id: unit_id.to_string(),
            keywords,
        })
    }

    /// Kahn topological order (parents before children).
    pub fn topological_order(&self) -> Option<Vec<&str>> {
        let mut indegree: Vec<usize> = self.nodes.iter().map(|n| n.parent_ids.len()).collect();
        let mut ready: Vec<usize> = self.roots.iter().rev().copied().collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop() {
            order.push(self.nodes[n].id.as_str());
            for &c in self.children[n].iter().rev() {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.push(c);
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }

    fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let mut mark = vec![Mark::New; self.nodes.len()];
        for start in 0..self.nodes.len() {
            if mark[start] != Mark::New {
                continue;
            }
            // (node, next child slot)
            let mut stack = vec![(start, 0usize)];
            mark[start] = Mark::Active;
            while let Some(&mut (node, ref mut slot)) = stack.last_mut() {
                if let Some(&child) = self.children[node].get(*slot) {
                    *slot += 1;
                    match mark[child] {
                        Mark::New => {
                            mark[child] = Mark::Active;
                            stack.push((child, 0));
                        }
                        Mark::Active => {
                            let from = stack.iter().position(|&(n, _)| n == child).unwrap();
                            let mut path: Vec<String> = stack[from..]
                                .iter()
                                .map(|&(n, _)| self.nodes[n].id.clone())
                                .collect();
                            path.push(self.nodes[child].id.clone());
                            return Some(path);
                        }
                        Mark::Done => {}
                    }
                } else {
                    mark[node] = Mark::Done;
                    stack.pop();
                }
            }
        }
        None
    }
}

/// Parses the line-oriented ontology format.
pub fn parse_ontology(graph_id: &str, text: &str, origin: &Path) -> Result<OntologyGraph> {
    let mut nodes = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or("").trim();
        let name = fields
            .next()
            .ok_or_else(|| Error::parse(origin, lineno, "expected node_id<TAB>name<TAB>parents"))?
            .trim();
        let parents = fields.next().unwrap_or("");
        if fields.next().is_some() {
            return Err(Error::parse(origin, lineno, "too many fields"));
        }
        if id.is_empty() {
            return Err(Error::parse(origin, lineno, "empty node id"));
        }
        if name.is_empty() {
            return Err(Error::parse(origin, lineno, format!("node {id} has an empty name")));
        }
        if let Some(first) = seen.insert(id.to_string(), lineno) {
            return Err(Error::parse(
                origin,
                lineno,
                format!("duplicate node id {id} (first defined on line {first})"),
            ));
        }
        let parent_ids = parents
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::to_string)
            .collect();
        nodes.push(OntologyNode {
            id: id.to_string(),
            name: name.to_string(),
            parent_ids,
        });
    }
    OntologyGraph::from_nodes(graph_id, nodes)
}

/// Loads one graph file; the graph id is the file stem.
pub fn load_ontology(path: &Path) -> Result<OntologyGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let graph_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Validation(format!("bad ontology file name {}", path.display())))?;
    let graph = parse_ontology(graph_id, &text, path)?;
    log::info!(
        "loaded ontology {}: {} nodes, {} edges",
        graph.graph_id(),
        graph.len(),
        graph.edge_count()
    );
    Ok(graph)
}

/// Loads every `*.tsv` graph file in a directory, sorted by file name.
pub fn load_ontology_dir(dir: &Path) -> Result<Vec<OntologyGraph>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "tsv") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(|p| load_ontology(p)).collect()
}
