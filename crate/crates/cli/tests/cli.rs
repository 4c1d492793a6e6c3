use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic")
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_custombench"))
        .arg("--config")
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Copies the fixture config with `edit` applied, keeping paths resolvable.
fn edited_config(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let text = fs::read_to_string(fixture().join("config.toml")).unwrap();
    let abs = fixture().canonicalize().unwrap();
    let mut text = edit(text);
    for key in ["ontology_dir", "exclusions", "units", "index"] {
        text = text.replace(&format!("{key} = \""), &format!("{key} = \"{}/", abs.display()));
    }
    text = text
        .replace("corpus = [\"", &format!("corpus = [\"{}/", abs.display()))
        .replace("fixture = \"", &format!("fixture = \"{}/", abs.display()));
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

const BENCH: [&str; 5] = ["build-benchmark", "--id", "organic-mech", "--requirement", "organic reaction mechanisms"];

#[test]
fn benchmark_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture().join("config.toml");
    let o = run(&cfg, dir.path(), &BENCH);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bench = dir.path().join("benchmark.jsonl");
    let eval = dir.path().join("eval");
    let reference = fixture().join("reference_accuracy.tsv");
    let o = run(&cfg, &eval, &["evaluate", "--benchmark", bench.to_str().unwrap(), "--reference", reference.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(eval.join("accuracies.tsv")).unwrap(),
        fs::read_to_string(fixture().join("golden/accuracies.tsv")).unwrap()
    );
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["spearman"]["value"], 1.0);
    assert_eq!(report["kendall_tau_b"]["value"], 1.0);

    let o = run(
        &cfg,
        &eval,
        &["compare-rankings", "--accuracies", eval.join("accuracies.tsv").to_str().unwrap(), "--reference", reference.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Spearman"));
}

#[test]
fn recorded_replies_score_like_live_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture().join("config.toml");
    let bench = fixture().join("golden/benchmark.jsonl");
    let items = fs::read_to_string(&bench).unwrap().lines().count() - 1;
    let replies = dir.path().join("always-a.txt");
    fs::write(&replies, "A\n".repeat(items)).unwrap();
    let arg = format!("always-a={}", replies.display());
    let o = run(&cfg, dir.path(), &["evaluate", "--benchmark", bench.to_str().unwrap(), "--replies", &arg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let weak = fs::read_to_string(fixture().join("golden/accuracies.tsv")).unwrap();
    let weak = weak.lines().find(|l| l.starts_with("model-weak")).unwrap().split('\t').nth(1).unwrap().to_string();
    let ours = fs::read_to_string(dir.path().join("accuracies.tsv")).unwrap();
    assert_eq!(ours.trim_end(), format!("always-a\t{weak}"));

    fs::write(&replies, "A\n").unwrap();
    let o = run(&cfg, dir.path(), &["evaluate", "--benchmark", bench.to_str().unwrap(), "--replies", &arg]);
    assert_eq!(code(&o), 2);
}

#[test]
fn greedy_strategy_builds_a_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = BENCH.to_vec();
    args.extend(["--strategy", "greedy", "--k2", "5"]);
    let o = run(&fixture().join("config.toml"), dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["strategy"], "greedy");
    assert_eq!(manifest["subset_size"], 5);
}

#[test]
fn unmatched_requirement_exits_empty_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&fixture().join("config.toml"), dir.path(), &["build-benchmark", "--requirement", "quantum gravity"]);
    assert_eq!(code(&o), 4);
    assert!(dir.path().join("manifest.json").exists());
    assert!(!dir.path().join("benchmark.jsonl").exists());
}

#[test]
fn missing_ontology_dir_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited_config(dir.path(), |t| t.replace("ontology_dir = \"ontology\"", "ontology_dir = \"no-such-dir\""));
    let o = run(&cfg, &dir.path().join("out"), &["select-units"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_config_and_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited_config(dir.path(), |t| t.replace("k1 = 3", "k1 = 3\nbogus = 1"));
    assert_eq!(code(&run(&cfg, dir.path(), &["select-units"])), 2);
    let cfg = fixture().join("config.toml");
    assert_eq!(code(&run(&cfg, dir.path(), &["build-benchmark", "--requirement", "x", "--strategy", "random"])), 2);
    assert_eq!(code(&run(&cfg, dir.path(), &["build-benchmark", "--requirement", "  "])), 2);
    assert_eq!(code(&run(&cfg, dir.path(), &["build-benchmark", "--requirement", "x", "--k2", "0"])), 2);
}

#[test]
fn failing_judges_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("silent.tsv");
    fs::write(&empty, "# no routes\n").unwrap();
    let cfg = edited_config(dir.path(), |t| {
        t.replace("oracles/judge-a.tsv", "JUDGE")
            .replace("oracles/judge-b.tsv", "JUDGE")
            .replace("oracles/judge-c.tsv", "JUDGE")
    });
    let text = fs::read_to_string(&cfg).unwrap().replace(
        &format!("{}/JUDGE", fixture().canonicalize().unwrap().display()),
        &empty.display().to_string(),
    );
    fs::write(&cfg, text).unwrap();
    let o = run(&cfg, &dir.path().join("out"), &BENCH);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_and_tag_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture().join("config.toml");
    let o = run(&cfg, dir.path(), &["synth-tagger-data", "--count", "12", "--real", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<serde_json::Value> = fs::read_to_string(dir.path().join("training.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 17);
    assert_eq!(lines.iter().filter(|l| l["persona"] == "real").count(), 5);

    let again = tempfile::tempdir().unwrap();
    run(&cfg, again.path(), &["synth-tagger-data", "--count", "12", "--real", "5"]);
    assert_eq!(
        fs::read(dir.path().join("training.jsonl")).unwrap(),
        fs::read(again.path().join("training.jsonl")).unwrap()
    );

    let gold = fixture().join("tagger_gold.jsonl");
    let o = run(&cfg, dir.path(), &["tag", "--gold", gold.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let card: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("tagger_scorecard.json")).unwrap()).unwrap();
    assert!(card["micro_f1"].as_f64().unwrap() > 0.9);

    let o = run(&cfg, dir.path(), &["tag", "--query", "How does the refractive index of a thin lens change?"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout), "phys:PHYS:0009\toptics\n");
}
