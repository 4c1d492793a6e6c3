//! QA corpus ingestion and the instance → unit index.
//!
//! Corpus files hold one JSON object per line with string fields `id`,
//! `query`, `answer` and `source`. The index file starts with a
//! `#index<TAB>{build_meta json}` header followed by
//! `instance_id<TAB>unit_id1,unit_id2,...` lines sorted by instance id;
//! postings are rebuilt on load.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::tagger::Tagger;
use crate::NON_SCIENTIFIC;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusInstance {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub query: String,
    pub answer: String,
    pub source: String,
}

/// Lowercased, whitespace-collapsed text used for exact-match comparisons.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Ground-truth items that must not leak into the corpus.
#[derive(Debug, Clone, Default)]
pub struct Exclusions {
    pub ids: HashSet<String>,
    /// Normalized query texts.
    pub texts: HashSet<String>,
}

impl Exclusions {
    pub fn add_text(&mut self, text: &str) {
        self.texts.insert(normalize_text(text));
    }

    /// Lines are `id<TAB>value`, `text<TAB>value`, or a bare query text.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ex = Exclusions::default();
        for line in text.lines() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some(("id", v)) => {
                    ex.ids.insert(v.trim().to_string());
                }
                Some(("text", v)) => ex.add_text(v),
                _ => ex.add_text(line),
            }
        }
        Ok(ex)
    }

    fn excludes(&self, inst: &CorpusInstance) -> bool {
        self.ids.contains(&inst.instance_id) || self.texts.contains(&normalize_text(&inst.query))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub read: usize,
    pub kept: usize,
    pub duplicate_pairs: usize,
    pub duplicate_ids: usize,
    pub excluded: usize,
}

fn parse_record(line: &str, path: &Path, lineno: usize) -> Result<CorpusInstance> {
    let inst: CorpusInstance = serde_json::from_str(line)
        .map_err(|e| Error::parse(path, lineno, format!("bad corpus record: {e}")))?;
    if inst.instance_id.is_empty() || inst.instance_id.contains(['\t', '\n', ',']) {
        return Err(Error::parse(path, lineno, "id must be non-empty without tabs or commas"));
    }
    if inst.query.trim().is_empty() || inst.answer.trim().is_empty() {
        return Err(Error::parse(path, lineno, format!("record {} has an empty query or answer", inst.instance_id)));
    }
    Ok(inst)
}

/// Streams corpus files in order, dropping repeated ids, repeated
/// (query, answer) pairs and excluded items.
pub fn ingest_corpus(
    paths: &[PathBuf],
    exclusions: Option<&Exclusions>,
) -> Result<(Vec<CorpusInstance>, IngestReport)> {
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    let mut pairs = HashSet::new();
    for path in paths {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let inst = parse_record(&line, path, i + 1)?;
            report.read += 1;
            if !ids.insert(inst.instance_id.clone()) {
                log::warn!("{}:{}: duplicate id {} dropped", path.display(), i + 1, inst.instance_id);
                report.duplicate_ids += 1;
                continue;
            }
            if !pairs.insert((normalize_text(&inst.query), normalize_text(&inst.answer))) {
                report.duplicate_pairs += 1;
                continue;
            }
            if exclusions.is_some_and(|ex| ex.excludes(&inst)) {
                report.excluded += 1;
                continue;
            }
            out.push(inst);
        }
    }
    report.kept = out.len();
    log::info!(
        "ingested {} records: kept {}, dropped {} duplicate pairs, {} duplicate ids, {} excluded",
        report.read,
        report.kept,
        report.duplicate_pairs,
        report.duplicate_ids,
        report.excluded
    );
    Ok((out, report))
}

pub fn corpus_to_jsonl(instances: &[CorpusInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: &Path, instances: &[CorpusInstance]) -> Result<()> {
    write_atomic(path, corpus_to_jsonl(instances).as_bytes())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub tagger: String,
    pub timestamp: String,
}

/// Instance → unit sets with the inverse postings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagIndex {
    entries: BTreeMap<String, BTreeSet<String>>,
    unit_postings: BTreeMap<String, Vec<String>>,
    pub build_meta: BuildMeta,
}

impl TagIndex {
    pub fn from_entries(entries: BTreeMap<String, BTreeSet<String>>, build_meta: BuildMeta) -> Self {
        let mut unit_postings: BTreeMap<String, Vec<String>> = BTreeMap::new();
        // entries iterate in id order, so postings come out sorted
        for (id, units) in &entries {
            for u in units {
                unit_postings.entry(u.clone()).or_default().push(id.clone());
            }
        }
        TagIndex {
            entries,
            unit_postings,
            build_meta,
        }
    }

    pub fn entries(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.entries
    }

    pub fn unit_postings(&self) -> &BTreeMap<String, Vec<String>> {
        &self.unit_postings
    }

    pub fn units_of(&self, instance_id: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(instance_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!(
            "#index\t{}\n",
            serde_json::to_string(&self.build_meta).expect("serializable")
        );
        for (id, units) in &self.entries {
            let units: Vec<&str> = units.iter().map(String::as_str).collect();
            let _ = writeln!(out, "{id}\t{}", units.join(","));
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let meta = match lines.next() {
            Some((_, header)) => {
                let json = header
                    .strip_prefix("#index\t")
                    .ok_or_else(|| Error::parse(origin, 1, "missing #index header"))?;
                serde_json::from_str::<BuildMeta>(json)
                    .map_err(|e| Error::parse(origin, 1, format!("bad build_meta: {e}")))?
            }
            None => return Err(Error::parse(origin, 1, "empty index file")),
        };
        let mut entries = BTreeMap::new();
        for (lineno, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (id, units) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, lineno, "expected instance_id<TAB>units"))?;
            let units: BTreeSet<String> = units
                .split(',')
                .filter(|u| !u.is_empty())
                .map(str::to_string)
                .collect();
            if entries.insert(id.to_string(), units).is_some() {
                return Err(Error::parse(origin, lineno, format!("duplicate instance {id}")));
            }
        }
        Ok(TagIndex::from_entries(entries, meta))
    }

    pub fn persist(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_file_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

const SHARD: usize = 10_000;

/// Tags every instance once. Tagger failures fall back to the
/// non-scientific unit.
pub fn build_index(
    instances: &[CorpusInstance],
    tagger: &dyn Tagger,
    known_units: &BTreeSet<String>,
    timestamp: &str,
) -> TagIndex {
    let mut entries = BTreeMap::new();
    let shards = instances.len().div_ceil(SHARD);
    for (n, shard) in instances.chunks(SHARD).enumerate() {
        let tagged: Vec<BTreeSet<String>> = shard
            .par_iter()
            .map(|inst| match tagger.tag(&inst.query) {
                Ok(units) => {
                    let mut units: BTreeSet<String> = units
                        .into_iter()
                        .filter(|u| {
                            let ok = known_units.contains(u);
                            if !ok {
                                log::warn!("{}: tagger emitted unknown unit {u}", inst.instance_id);
                            }
                            ok
                        })
                        .collect();
                    if units.len() > 1 {
                        units.remove(NON_SCIENTIFIC);
                    }
                    if units.is_empty() {
                        units.insert(NON_SCIENTIFIC.to_string());
                    }
                    units
                }
                Err(e) => {
                    log::warn!("tagger failed on {}: {e}", inst.instance_id);
                    BTreeSet::from([NON_SCIENTIFIC.to_string()])
                }
            })
            .collect();
        for (inst, units) in shard.iter().zip(tagged) {
            entries.insert(inst.instance_id.clone(), units);
        }
        log::info!("tagged shard {}/{} ({} instances)", n + 1, shards, shard.len());
    }
    TagIndex::from_entries(
        entries,
        BuildMeta {
            tagger: tagger.identity(),
            timestamp: timestamp.to_string(),
        },
    )
}

/// Instances sharing at least one unit with `target_units`.
pub fn lookup_candidates(index: &TagIndex, target_units: &BTreeSet<String>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for unit in target_units {
        match index.unit_postings.get(unit) {
            Some(postings) => out.extend(postings.iter().cloned()),
            None => log::warn!("unit {unit} has no postings in the index"),
        }
    }
    out
}
