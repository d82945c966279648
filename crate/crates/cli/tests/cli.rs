use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use demorank::config::ExperimentConfig;
use demorank::parallel::Exec;
use demorank::pipeline::{backend_for, load_data, trec_run_string, Experiment, SelectionPolicy};

const SMALL: &str = r#"
[data]
source = "synthetic"
[data.params]
train_queries = 12
test_queries = 4
passages_per_query = 6
[mining]
b = 4
[reranker.train]
m = 8
[evaluation]
depth = 6
"#;

fn demorank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_demorank"))
        .current_dir(dir)
        .env_remove("DEMORANK_SCORER_URL")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

const STAGES: [&str; 6] = [
    "build-pool",
    "mine-candidates",
    "score-candidates",
    "train-retriever",
    "build-samples",
    "train-reranker",
];

fn run_stages(dir: &Path) {
    for stage in STAGES {
        ok(&demorank(dir, &[stage, "-c", "small.toml"]));
    }
}

#[test]
fn full_chain_reports_all_policies_and_matches_in_memory_run() {
    let dir = setup();
    run_stages(dir.path());
    ok(&demorank(dir.path(), &["evaluate", "-c", "small.toml"]));
    let table = ok(&demorank(dir.path(), &["compare", "-c", "small.toml"]));
    for p in SelectionPolicy::ALL {
        assert!(table.contains(p.as_str()), "{table}");
        assert!(dir.path().join(format!("work/reports/{p}.json")).exists());
    }
    let comparison: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("work/comparison.json")).unwrap()).unwrap();
    assert_eq!(comparison["rows"].as_array().unwrap().len(), 5);

    // the staged chain reproduces the in-memory experiment exactly
    let config = ExperimentConfig::load(&dir.path().join("small.toml")).unwrap();
    let data = load_data(&config.data).unwrap();
    let backend = backend_for(&config, &data);
    let out = Experiment {
        config: &config,
        backend: &*backend,
        exec: Exec::Parallel,
    }
    .run(&data.train, &data.test)
    .unwrap();
    for (policy, run) in &out.runs {
        let on_disk = fs::read_to_string(dir.path().join(format!("work/runs/{policy}.trec"))).unwrap();
        assert_eq!(on_disk, trec_run_string(run), "{policy}");
    }
}

#[test]
fn rerun_is_a_noop_unless_forced() {
    let dir = setup();
    ok(&demorank(dir.path(), &["build-pool", "-c", "small.toml"]));
    let first = ok(&demorank(dir.path(), &["mine-candidates", "-c", "small.toml"]));
    assert!(first.contains("wrote"));
    let manifest = fs::read(dir.path().join("work/candidates.jsonl.manifest.json")).unwrap();
    let again = ok(&demorank(dir.path(), &["mine-candidates", "-c", "small.toml"]));
    assert!(again.contains("up to date"), "{again}");
    assert_eq!(fs::read(dir.path().join("work/candidates.jsonl.manifest.json")).unwrap(), manifest);
    let forced = ok(&demorank(dir.path(), &["mine-candidates", "-c", "small.toml", "--force"]));
    assert!(forced.contains("wrote"), "{forced}");
}

#[test]
fn evaluate_two_policies_writes_two_runs_and_two_reports() {
    let dir = setup();
    run_stages(dir.path());
    let out = ok(&demorank(
        dir.path(),
        &["evaluate", "-c", "small.toml", "--policy", "demorank", "--policy", "random"],
    ));
    assert!(out.contains("demorank") && out.contains("random"), "{out}");
    let names = |sub: &str| {
        let mut v: Vec<String> = fs::read_dir(dir.path().join("work").join(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| !n.ends_with(".manifest.json"))
            .collect();
        v.sort();
        v
    };
    assert_eq!(names("runs"), ["demorank.trec", "random.trec"]);
    assert_eq!(names("reports"), ["demorank.json", "random.json"]);
}

#[test]
fn missing_artifact_exits_3() {
    let dir = setup();
    let out = demorank(dir.path(), &["train-retriever", "-c", "small.toml"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifact"));
}

#[test]
fn bad_config_exits_2() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "[mining]\nb = 0\n").unwrap();
    assert_eq!(demorank(dir.path(), &["build-pool", "-c", "bad.toml"]).status.code(), Some(2));
    fs::write(dir.path().join("broken.toml"), "[mining\n").unwrap();
    assert_eq!(demorank(dir.path(), &["build-pool", "-c", "broken.toml"]).status.code(), Some(2));
    assert_eq!(demorank(dir.path(), &["build-pool", "-c", "absent.toml"]).status.code(), Some(2));
}

#[test]
fn changed_config_makes_downstream_stale() {
    let dir = setup();
    ok(&demorank(dir.path(), &["build-pool", "-c", "small.toml"]));
    fs::write(dir.path().join("other.toml"), SMALL.replace("b = 4", "b = 3")).unwrap();
    let out = demorank(dir.path(), &["mine-candidates", "-c", "other.toml"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stale artifact"));
}

#[test]
fn tampered_artifact_is_stale() {
    let dir = setup();
    ok(&demorank(dir.path(), &["build-pool", "-c", "small.toml"]));
    let pool = dir.path().join("work/pool.jsonl");
    let mut text = fs::read_to_string(&pool).unwrap();
    text.push('\n');
    fs::write(&pool, text).unwrap();
    assert_eq!(demorank(dir.path(), &["mine-candidates", "-c", "small.toml"]).status.code(), Some(3));
}

#[test]
fn unreachable_scorer_exits_4() {
    let dir = setup();
    let http = format!("{SMALL}\n[backend]\nkind = \"http\"\n[backend.http]\nmax_attempts = 1\ntimeout_ms = 200\n");
    fs::write(dir.path().join("http.toml"), http).unwrap();
    ok(&demorank(dir.path(), &["build-pool", "-c", "http.toml"]));
    ok(&demorank(dir.path(), &["mine-candidates", "-c", "http.toml"]));
    let out = Command::new(env!("CARGO_BIN_EXE_demorank"))
        .current_dir(dir.path())
        .env("DEMORANK_SCORER_URL", "http://127.0.0.1:9/score")
        .args(["score-candidates", "-c", "http.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn print_config_emits_resolved_json() {
    let dir = setup();
    let out = Command::new(env!("CARGO_BIN_EXE_demorank"))
        .current_dir(dir.path())
        .env("DEMORANK_SCORER_URL", "http://example.invalid/score")
        .args(["print-config", "-c", "small.toml"])
        .output()
        .unwrap();
    let json: serde_json::Value = serde_json::from_slice(&ok_bytes(&out)).unwrap();
    assert_eq!(json["mining"]["b"], 4);
    assert_eq!(json["backend"]["http"]["endpoint"], "http://example.invalid/score");
    let flag = demorank(dir.path(), &["--print-config", "-c", "small.toml"]);
    assert!(flag.status.success());
}

fn ok_bytes(out: &Output) -> Vec<u8> {
    ok(out);
    out.stdout.clone()
}
