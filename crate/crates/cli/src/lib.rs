//! `custombench` command-line front end. The binary is a thin wrapper over
//! [`run_args`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use custombench::benchgen::{build_benchmark, McqOptions};
use custombench::config::PipelineConfig;
use custombench::corpus::{build_index, ingest_corpus, write_corpus, CorpusInstance, Exclusions, TagIndex};
use custombench::evalharness::{
    accuracy_file_string, administer, administer_recorded, consistency_report, load_accuracy_file, ModelRun,
};
use custombench::ontology::{load_ontology_dir, KeywordSet, OntologyGraph};
use custombench::oracles::{InFlightLimit, OracleEnsemble, PromptLibrary};
use custombench::pipeline::{run_online, OnlineContext, OnlineOptions, Requirement, Strategy, SubsetOptions};
use custombench::tagger::{
    annotate_queries, evaluate_tagger, generate_synthetic_instances, training_records, BaselineTagger, GoldTags,
    OracleTagger, Tagger,
};
use custombench::units::{keyword_sets, select_units, unit_frequencies, SelectionOptions, UnitSet};
use custombench::{Error, ErrorClass, Result};

const MANIFEST: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "custombench", version, about = "Build custom evaluation benchmarks from an ontology-tagged QA corpus")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "custombench.toml")]
    config: PathBuf,
    /// Output directory; overrides `paths.out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads and concurrent remote calls.
    #[arg(long, short, global = true)]
    jobs: Option<usize>,
    /// Overrides `params.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Traverse the ontology and write the knowledge-unit set.
    SelectUnits,
    /// Tag the corpus and write the instance → unit index.
    BuildIndex,
    /// Resolve a requirement and build its multiple-choice benchmark.
    BuildBenchmark(BuildBenchmarkArgs),
    /// Score models on a benchmark and optionally compare against a reference.
    Evaluate(EvaluateArgs),
    /// Compare two accuracy files.
    CompareRankings(CompareArgs),
    /// Generate synthetic tagger training data.
    SynthTaggerData(SynthArgs),
    /// Tag one query, or score the tagger against a gold file.
    Tag(TagArgs),
}

#[derive(Args)]
struct BuildBenchmarkArgs {
    /// Requirement text.
    #[arg(long, conflicts_with = "requirement_file")]
    requirement: Option<String>,
    /// File whose first line is the requirement and the rest its description.
    #[arg(long)]
    requirement_file: Option<PathBuf>,
    #[arg(long, default_value = "requirement")]
    id: String,
    /// `binary_search` or `greedy`.
    #[arg(long, default_value = "binary_search")]
    strategy: String,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    benchmark: PathBuf,
    /// Recorded replies as `model=path`; repeatable. Without any, the
    /// configured models are queried.
    #[arg(long = "replies", value_name = "MODEL=PATH")]
    replies: Vec<String>,
    /// Reference accuracy file (`model<TAB>accuracy`).
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    accuracies: PathBuf,
    #[arg(long)]
    reference: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Also annotate this many corpus queries with the configured tagger.
    #[arg(long, default_value_t = 0)]
    real: usize,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long, conflicts_with = "gold")]
    query: Option<String>,
    /// JSON lines with `id`, `query` and `gold` (unit names).
    #[arg(long)]
    gold: Option<PathBuf>,
}

struct Ctx {
    cfg: PipelineConfig,
    out_dir: PathBuf,
    limit: Arc<InFlightLimit>,
    prompts: PromptLibrary,
}

impl Ctx {
    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).expect("serializable");
        s.push('\n');
        self.write(name, s)
    }

    fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let s: String = rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
            .collect();
        self.write(name, s)
    }

    fn graphs(&self) -> Result<Vec<OntologyGraph>> {
        let dir = self.cfg.require("ontology_dir", &self.cfg.paths.ontology_dir)?;
        let graphs = load_ontology_dir(&dir)?;
        if graphs.is_empty() {
            return Err(Error::Validation(format!("no ontology files in {}", dir.display())));
        }
        Ok(graphs)
    }

    fn units(&self) -> Result<UnitSet> {
        UnitSet::load(&self.cfg.require("units", &self.cfg.paths.units)?)
    }

    fn corpus(&self) -> Result<Vec<CorpusInstance>> {
        let exclusions = match &self.cfg.paths.exclusions {
            Some(p) => Some(Exclusions::load(&self.cfg.resolve(p))?),
            None => None,
        };
        Ok(ingest_corpus(&self.cfg.corpus_paths()?, exclusions.as_ref())?.0)
    }

    fn tagger(&self, units: &UnitSet, sets: impl FnOnce() -> Result<BTreeMap<String, KeywordSet>>) -> Result<Box<dyn Tagger>> {
        Ok(match &self.cfg.oracles.tagger {
            Some(spec) => Box::new(OracleTagger::new(
                self.cfg.oracle(spec, &self.limit)?,
                self.prompts.annotation.clone(),
                units,
            )),
            None => Box::new(BaselineTagger::new(&sets()?, self.cfg.params.tag_threshold)),
        })
    }
}

fn run(cli: Cli) -> Result<u8> {
    let mut cfg = PipelineConfig::load(&cli.global.config)?;
    if let Some(seed) = cli.global.seed {
        cfg.params.seed = seed;
    }
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(Error::Validation("--jobs must be at least 1".into()));
        }
        // a second build in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let out_dir = match (&cli.global.out_dir, &cfg.paths.out_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => cfg.resolve(d),
        (None, None) => PathBuf::from("out"),
    };
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let prompts = match &cfg.paths.prompts_dir {
        Some(d) => PromptLibrary::load_dir(&cfg.resolve(d))?,
        None => PromptLibrary::builtin(),
    };
    let limit = InFlightLimit::new(cli.global.jobs.unwrap_or(cfg.params.max_in_flight));
    let ctx = Ctx {
        cfg,
        out_dir,
        limit,
        prompts,
    };
    match cli.command {
        Command::SelectUnits => cmd_select_units(&ctx),
        Command::BuildIndex => cmd_build_index(&ctx),
        Command::BuildBenchmark(a) => cmd_build_benchmark(&ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a),
        Command::CompareRankings(a) => cmd_compare(&ctx, a),
        Command::SynthTaggerData(a) => cmd_synth(&ctx, a),
        Command::Tag(a) => cmd_tag(&ctx, a),
    }
}

fn cmd_select_units(ctx: &Ctx) -> Result<u8> {
    let graphs = ctx.graphs()?;
    let classifier = ctx.cfg.required_oracle("classifier", &ctx.cfg.oracles.classifier, &ctx.limit)?;
    let p = &ctx.cfg.params;
    let opts = SelectionOptions {
        min_descendants: p.min_descendants,
        recurse_after_moderate: p.recurse_after_moderate,
        attempts: p.classifier_attempts as u32,
    };
    let set = select_units(&graphs, classifier.as_ref(), &ctx.prompts.granularity, &opts);
    ctx.write("units.tsv", set.to_units_file())?;
    ctx.write("selection_trace.tsv", set.to_trace_file())?;
    let classified = set.selection_log.iter().filter(|t| t.decision.was_classified()).count();
    ctx.write_json(
        MANIFEST,
        &json!({
            "command": "select-units",
            "config": ctx.cfg.to_json(),
            "graphs": graphs.iter().map(|g| json!({"graph_id": g.graph_id(), "nodes": g.len(), "edges": g.edge_count()})).collect::<Vec<_>>(),
            "visited": set.selection_log.len(),
            "classifier_calls": classified,
            "units": set.len(),
        }),
    )?;
    println!("{} unit(s) selected ({} nodes visited)", set.len(), set.selection_log.len());
    Ok(0)
}

fn cmd_build_index(ctx: &Ctx) -> Result<u8> {
    let units = ctx.units()?;
    let exclusions = match &ctx.cfg.paths.exclusions {
        Some(p) => Some(Exclusions::load(&ctx.cfg.resolve(p))?),
        None => None,
    };
    let (corpus, report) = ingest_corpus(&ctx.cfg.corpus_paths()?, exclusions.as_ref())?;
    let tagger = ctx.tagger(&units, || keyword_sets(&units, &ctx.graphs()?))?;
    let known: BTreeSet<String> = units.units.iter().map(|u| u.unit_id.clone()).collect();
    let index = build_index(&corpus, tagger.as_ref(), &known, &ctx.cfg.params.timestamp);
    index.persist(&ctx.out_dir.join("index.tsv"))?;
    let freq = unit_frequencies(&index, &units);
    ctx.write_json(
        MANIFEST,
        &json!({
            "command": "build-index",
            "config": ctx.cfg.to_json(),
            "ingest": report,
            "indexed": index.len(),
            "build_meta": index.build_meta,
            "unit_frequencies": freq,
        }),
    )?;
    println!("indexed {} instance(s) with {}", index.len(), tagger.identity());
    Ok(0)
}

fn read_requirement(a: &BuildBenchmarkArgs) -> Result<Requirement> {
    let mut req = match (&a.requirement, &a.requirement_file) {
        (Some(t), _) => Requirement::new(&a.id, t.trim()),
        (None, Some(p)) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
            let mut r = Requirement::new(&a.id, first.trim());
            if !rest.trim().is_empty() {
                r.description = Some(rest.trim().to_string());
            }
            r
        }
        (None, None) => return Err(Error::Validation("give --requirement or --requirement-file".into())),
    };
    req.requirement_id = a.id.clone();
    req.validate()?;
    Ok(req)
}

fn cmd_build_benchmark(ctx: &Ctx, a: BuildBenchmarkArgs) -> Result<u8> {
    let req = read_requirement(&a)?;
    let strategy: Strategy = a.strategy.parse()?;
    let p = &ctx.cfg.params;
    let opts = OnlineOptions {
        k1: a.k1.unwrap_or(p.k1),
        subset: SubsetOptions {
            k2: a.k2.unwrap_or(p.k2),
            trials: a.trials.unwrap_or(p.trials),
            seed: p.seed,
            normalize: p.normalize_objective,
        },
        strategy,
    };
    if opts.k1 == 0 || opts.subset.k2 == 0 || opts.subset.trials == 0 {
        return Err(Error::Validation("k1, k2 and trials must be at least 1".into()));
    }
    let units = ctx.units()?;
    let index = TagIndex::load(&ctx.cfg.require("index", &ctx.cfg.paths.index)?)?;
    let corpus: BTreeMap<String, CorpusInstance> = ctx
        .corpus()?
        .into_iter()
        .map(|c| (c.instance_id.clone(), c))
        .collect();
    let frequencies = unit_frequencies(&index, &units);
    let rankers = ctx.cfg.oracle_list("rankers", &ctx.cfg.oracles.rankers, &ctx.limit)?;
    let judges = OracleEnsemble::new("judges", ctx.cfg.oracle_list("judges", &ctx.cfg.oracles.judges, &ctx.limit)?)?;
    let generator = ctx.cfg.required_oracle("generator", &ctx.cfg.oracles.generator, &ctx.limit)?;
    let likelihood = ctx.cfg.likelihood(&ctx.limit)?;
    let embedder = ctx.cfg.embedder(&ctx.limit)?;
    let online = OnlineContext {
        units: &units,
        index: &index,
        corpus: &corpus,
        frequencies: &frequencies,
        rankers: &rankers,
        judges: &judges,
        prompts: &ctx.prompts,
        likelihood: likelihood.as_deref(),
        embedder: embedder.as_ref(),
    };
    let run = run_online(&online, &req, &opts)?;
    let mut config = ctx.cfg.to_json();
    config["run"] = serde_json::to_value(opts).expect("serializable");
    let mut manifest = run.manifest(strategy, config);

    let Some(subset) = &run.subset else {
        ctx.write_json(MANIFEST, &manifest)?;
        return Err(Error::Empty(format!(
            "no relevant instances for {:?} ({} candidate(s))",
            req.text, run.candidates
        )));
    };
    let instances: Vec<CorpusInstance> = subset.members.iter().map(|m| m.candidate.instance.clone()).collect();
    write_corpus(&ctx.out_dir.join("subset.jsonl"), &instances)?;
    ctx.write_jsonl("subset_scores.jsonl", &subset.members.iter().map(|m| json!({
        "id": m.candidate.instance.instance_id,
        "matching_units": m.candidate.matching_units,
        "avg_rank": m.candidate.avg_rank,
        "hardness": m.hardness,
        "hardness_surrogate": m.hardness_surrogate,
        "quality": m.quality,
    })).collect::<Vec<_>>())?;
    let mcq = McqOptions {
        retry_budget: p.mcq_retry_budget,
        shuffle_seed: p.shuffle_options.then_some(p.seed),
    };
    let built = build_benchmark(&req.requirement_id, &req, MANIFEST, &instances, generator.as_ref(), &ctx.prompts.mcq, &mcq);
    let (bench, skips) = match built {
        Ok(b) => b,
        Err(e) => {
            manifest.benchmark = Some(json!({ "error": e.to_string() }));
            ctx.write_json(MANIFEST, &manifest)?;
            return Err(e.in_stage("build_benchmark"));
        }
    };
    bench.write(&ctx.out_dir.join("benchmark.jsonl"))?;
    ctx.write_json("skip_report.json", &skips)?;
    manifest.benchmark = Some(json!({
        "file": "benchmark.jsonl",
        "items": bench.items.len(),
        "skipped": skips.skipped.len(),
        "skip_counts": skips.counts,
    }));
    ctx.write_json(MANIFEST, &manifest)?;
    println!(
        "{} item(s) from {} candidate(s), {} after cutoff, {} skipped",
        bench.items.len(),
        run.candidates,
        run.pool,
        skips.skipped.len()
    );
    Ok(0)
}

fn cmd_evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<u8> {
    let bench = custombench::benchgen::Benchmark::load(&a.benchmark)?;
    let mut runs: Vec<ModelRun> = Vec::new();
    if a.replies.is_empty() {
        for spec in &ctx.cfg.oracles.models {
            let model = ctx.cfg.oracle(spec, &ctx.limit)?;
            runs.push(administer(&bench, model.as_ref(), &ctx.prompts.answer)?);
        }
        if runs.is_empty() {
            return Err(Error::Validation("no --replies given and oracles.models is empty".into()));
        }
    } else {
        for r in &a.replies {
            let (name, path) = r
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("--replies expects MODEL=PATH, got {r:?}")))?;
            let path = Path::new(path);
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            runs.push(administer_recorded(&bench, name, &text)?);
        }
    }
    let accuracies: BTreeMap<String, f64> = runs.iter().map(|r| (r.model_name.clone(), r.accuracy)).collect();
    if accuracies.len() != runs.len() {
        return Err(Error::Validation("model names must be unique".into()));
    }
    ctx.write("accuracies.tsv", accuracy_file_string(&accuracies))?;
    ctx.write_jsonl("runs.jsonl", &runs)?;
    let mut manifest = json!({
        "command": "evaluate",
        "benchmark_id": bench.benchmark_id,
        "items": bench.items.len(),
        "accuracies": accuracies,
    });
    if let Some(reference) = &a.reference {
        let refs = load_accuracy_file(reference)?;
        let report = consistency_report(&accuracies, &refs, &reference.display().to_string())?;
        ctx.write_json("report.json", &report)?;
        ctx.write("report.txt", report.to_table())?;
        print!("{}", report.to_table());
        manifest["spearman"] = json!(report.spearman);
        manifest["kendall_tau_b"] = json!(report.kendall_tau_b);
    } else {
        for (m, acc) in &accuracies {
            println!("{m}\t{acc:.4}");
        }
    }
    ctx.write_json(MANIFEST, &manifest)?;
    Ok(0)
}

fn cmd_compare(ctx: &Ctx, a: CompareArgs) -> Result<u8> {
    let acc = load_accuracy_file(&a.accuracies)?;
    let refs = load_accuracy_file(&a.reference)?;
    let report = consistency_report(&acc, &refs, &a.reference.display().to_string())?;
    ctx.write_json("report.json", &report)?;
    ctx.write("report.txt", report.to_table())?;
    ctx.write_json(MANIFEST, &json!({"command": "compare-rankings", "spearman": report.spearman, "kendall_tau_b": report.kendall_tau_b}))?;
    print!("{}", report.to_table());
    Ok(0)
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<u8> {
    let units = ctx.units()?;
    let graphs = ctx.graphs()?;
    let sets = keyword_sets(&units, &graphs)?;
    let generator = ctx.cfg.required_oracle("generator", &ctx.cfg.oracles.generator, &ctx.limit)?;
    let seed = ctx.cfg.params.seed;
    let out = generate_synthetic_instances(&units, &sets, a.count, seed, generator.as_ref(), &ctx.prompts)?;
    let real = if a.real > 0 {
        let corpus: Vec<CorpusInstance> = ctx.corpus()?.into_iter().take(a.real).collect();
        let tagger = ctx.tagger(&units, || Ok(sets.clone()))?;
        let preds = annotate_queries(&corpus, tagger.as_ref());
        corpus.into_iter().map(|c| c.query).zip(preds).collect()
    } else {
        vec![]
    };
    let (records, mix) = training_records(&out.instances, &real);
    ctx.write_jsonl("training.jsonl", &records)?;
    ctx.write_json(
        MANIFEST,
        &json!({
            "command": "synth-tagger-data",
            "seed": seed,
            "requested": a.count,
            "attempts": out.attempts,
            "skipped": out.skipped,
            "aborted": out.aborted,
            "mix": mix,
        }),
    )?;
    println!("{} synthetic + {} real record(s)", mix.synthetic, mix.real);
    if out.instances.is_empty() && a.count > 0 {
        return Err(Error::Empty("generator produced no synthetic queries".into()));
    }
    Ok(0)
}

#[derive(serde::Deserialize)]
struct GoldRecord {
    id: String,
    query: String,
    gold: BTreeSet<String>,
}

fn cmd_tag(ctx: &Ctx, a: TagArgs) -> Result<u8> {
    let units = ctx.units()?;
    let tagger = ctx.tagger(&units, || keyword_sets(&units, &ctx.graphs()?))?;
    let names = units.names();
    if let Some(q) = &a.query {
        let tags = tagger.tag(q)?;
        for t in &tags {
            println!("{t}\t{}", names.get(t).map(String::as_str).unwrap_or(""));
        }
        return Ok(0);
    }
    let path = a
        .gold
        .ok_or_else(|| Error::Validation("give --query or --gold".into()))?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut instances = Vec::new();
    let mut gold = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: GoldRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(&path, i + 1, e.to_string()))?;
        instances.push(CorpusInstance {
            instance_id: r.id.clone(),
            query: r.query,
            answer: String::new(),
            source: String::new(),
        });
        gold.push(GoldTags {
            instance_id: r.id,
            names: r.gold,
        });
    }
    let preds = annotate_queries(&instances, tagger.as_ref());
    let card = evaluate_tagger(&preds, &gold, &names, ctx.cfg.params.eval_threshold)?;
    ctx.write_jsonl("predictions.jsonl", &preds)?;
    ctx.write_json("tagger_scorecard.json", &card)?;
    ctx.write("tagger_scorecard.txt", card.to_table())?;
    print!("{}", card.to_table());
    Ok(0)
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Validation => 2,
        ErrorClass::Oracle => 3,
        ErrorClass::Empty => 4,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
