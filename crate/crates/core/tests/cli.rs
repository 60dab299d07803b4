use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "n_concepts=3",
    "--set", "embedding_dim=6",
    "--set", "synthetic.n_pairs=200",
    "--set", "acquisitions_per_episode=20",
    "--set", "episodes=3",
    "--set", "batch_size=32",
];

fn cbrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbrm")).args(args).output().unwrap()
}

fn with_small<'a>(mut head: Vec<&'a str>, tail: &[&'a str]) -> Vec<&'a str> {
    head.extend_from_slice(SMALL);
    head.extend_from_slice(tail);
    head
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = cbrm(&with_small(vec!["gen"], &["--seed", "7", "--out", s(out)]));
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["embeddings.cbre", "annotations.jsonl", "world.json", "config.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = cbrm(&["gen", "--set", "synthetic.label_flip_prob=0.6", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let o = cbrm(&["run", "--strategy", "greedy", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    for name in ["random", "variance", "cwis", "eig"] {
        assert!(msg.contains(name), "{msg}");
    }
    assert_eq!(cbrm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cbrm(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_on_generated_files_and_seed_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = cbrm(&with_small(vec!["gen"], &["--set", "synthetic.n_pairs=100", "--out", s(&data)]));
    assert!(o.status.success(), "{}", stderr(&o));

    let runs = dir.path().join("runs");
    let (e, a) = (data.join("embeddings.cbre"), data.join("annotations.jsonl"));
    let args = with_small(
        vec!["run"],
        &["--set", "acquisitions_per_episode=10", "--embeddings", s(&e), "--annotations", s(&a), "--out", s(&runs)],
    );
    let o = cbrm(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(runs.join("eig/seed_0/metrics.csv").exists());

    let many = dir.path().join("many");
    let o = cbrm(&with_small(vec!["run"], &["--strategy", "eig", "--seeds", "0..4", "--dump-scores", "--out", s(&many)]));
    assert!(o.status.success(), "{}", stderr(&o));
    let seeds = std::fs::read_dir(many.join("eig")).unwrap().count();
    assert_eq!(seeds, 5);
    assert!(many.join("eig/seed_4/scores/episode_001.csv").exists());

    // self-comparison cannot show an improvement
    let cmp = dir.path().join("cmp");
    let o = cbrm(&["compare", s(&many), "--out", s(&cmp), "--candidate", "eig", "--baseline", "eig"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    for f in ["aggregate.csv", "concept_acc.svg", "pref_acc.svg", "verdict.txt"] {
        assert!(cmp.join(f).exists(), "{f}");
    }

    let svg = dir.path().join("pref.svg");
    let o = cbrm(&["plot", s(&cmp.join("aggregate.csv")), "--metric", "preference", "--out", s(&svg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));
}

#[test]
fn compare_without_metrics_names_the_directory() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("eig/seed_0");
    std::fs::create_dir_all(&run).unwrap();
    std::fs::write(run.join("config.json"), "{}").unwrap();
    let o = cbrm(&["compare", s(dir.path()), "--out", s(&dir.path().join("cmp"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(s(&run)), "{}", stderr(&o));
}

#[test]
fn probe_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = cbrm(&with_small(vec!["probe"], &["--set", "synthetic.leakage=true", "--out", s(dir.path())]));
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("probe.json")).unwrap()).unwrap();
    assert_eq!(report["per_concept"].as_array().unwrap().len(), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("leakage_suspected"));
}
