use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bytegram(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bytegram"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = bytegram(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small four-family corpus in `dir/corpus`.
fn small_corpus(dir: &Path) -> PathBuf {
    ok(
        &[
            "gen-synth", "--families", "4", "--per-family", "15", "--benign", "15", "--min-len", "1024",
            "--max-len", "2048", "--seed", "3", "--out", "corpus", "-q",
        ],
        dir,
    );
    dir.join("corpus")
}

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn help_lists_every_subcommand() {
    let tmp = TempDir::new().unwrap();
    let out = ok(&["--help"], tmp.path());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in [
        "gen-synth", "scan", "extract", "run-level", "run-all-levels", "sweep-rf-depth", "sweep-mlp-alpha",
        "compare-ngrams", "report",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn experiment_help_documents_common_flags() {
    let tmp = TempDir::new().unwrap();
    let text = String::from_utf8(ok(&["run-level", "--help"], tmp.path()).stdout).unwrap();
    for flag in [
        "--seed", "--max-models", "--n ", "--m ", "--jobs", "--select-per-fold", "--out", "--k-malware",
        "--k-benign", "--k-family", "--exact", "--config",
    ] {
        assert!(text.contains(flag), "{flag} missing from run-level help");
    }
}

#[test]
fn bad_invocations_exit_nonzero() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    assert!(!bytegram(&["run-level", "--level", "1", "--out", "r", "--no-such-flag"], dir).status.success());
    assert!(!bytegram(&["frobnicate"], dir).status.success());
    let missing = bytegram(&["run-level", "--level", "1", "--out", "r"], dir);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("no corpus"));
    let gone = bytegram(&["run-level", "--level", "1", "--corpus", "nope", "--out", "r"], dir);
    assert!(!gone.status.success());
}

#[test]
fn invalid_config_fails_before_any_results() {
    let tmp = TempDir::new().unwrap();
    small_corpus(tmp.path());
    for bad in [["--m", "0"], ["--folds", "1"], ["--learners", "nope"], ["--knn-k", "0"]] {
        let mut args = vec!["run-level", "--level", "1", "--corpus", "corpus", "--out", "bad"];
        args.extend(bad);
        let out = bytegram(&args, tmp.path());
        assert!(!out.status.success(), "{bad:?} accepted");
        assert!(!tmp.path().join("bad/summary.csv").exists());
    }
}

#[test]
fn output_inside_corpus_is_refused() {
    let tmp = TempDir::new().unwrap();
    let corpus = small_corpus(tmp.path());
    let before = listing(&corpus);
    let out = bytegram(&["run-level", "--level", "1", "--corpus", "corpus", "--out", "corpus/results"], tmp.path());
    assert!(!out.status.success());
    assert_eq!(listing(&corpus), before);
}

#[test]
fn run_level_writes_results_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    let args = |out: &'static str| {
        vec!["run-level", "--level", "2", "--corpus", "corpus", "--max-models", "3", "--seed", "9", "--out", out, "-q"]
    };
    ok(&args("a"), dir);
    ok(&args("b"), dir);
    for f in ["config.used", "run.log", "summary.csv", "level_02.csv", "level_02_combos.csv"] {
        assert!(dir.join("a").join(f).exists(), "{f} missing");
    }
    for f in ["summary.csv", "summary_fold_mean.csv", "level_02.csv", "level_02_combos.csv"] {
        assert_eq!(fs::read(dir.join("a").join(f)).unwrap(), fs::read(dir.join("b").join(f)).unwrap(), "{f}");
    }
    let summary = fs::read_to_string(dir.join("a/summary.csv")).unwrap();
    assert!(summary.starts_with("level,learner,high,avg,low,count\n"));
    assert_eq!(summary.lines().count(), 1 + 4);
}

#[test]
fn config_used_replays_the_run() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    ok(
        &["run-level", "--level", "1", "--corpus", "corpus", "--max-models", "2", "--learners", "knn,rf", "--out", "a", "-q"],
        dir,
    );
    ok(&["run-level", "--level", "1", "--config", "a/config.used", "--out", "b", "-q"], dir);
    assert_eq!(fs::read(dir.join("a/summary.csv")).unwrap(), fs::read(dir.join("b/summary.csv")).unwrap());
    let used = fs::read_to_string(dir.join("b/config.used")).unwrap();
    assert!(used.contains("\"run-level\""));
}

#[test]
fn extracted_dictionaries_reproduce_direct_run() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    ok(&["extract", "--corpus", "corpus", "--out", "dicts", "-q"], dir);
    for f in ["index.csv", "params.json", "families", "features", "samples"] {
        assert!(dir.join("dicts").join(f).exists(), "{f} missing");
    }
    let run = |src: &'static str, path: &'static str, out: &'static str| {
        ok(&["run-level", "--level", "3", src, path, "--max-models", "2", "--out", out, "-q"], dir);
    };
    run("--corpus", "corpus", "direct");
    run("--dicts", "dicts", "cached");
    assert_eq!(
        fs::read(dir.join("direct/level_03.csv")).unwrap(),
        fs::read(dir.join("cached/level_03.csv")).unwrap()
    );
    let conflict = bytegram(&["run-level", "--level", "1", "--dicts", "dicts", "--n", "4", "--out", "x"], dir);
    assert!(!conflict.status.success());
}

#[test]
fn scan_writes_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let corpus = small_corpus(dir);
    fs::write(corpus.join("family-00/empty.bin"), b"").unwrap();
    ok(&["scan", "--corpus", "corpus", "--out", "scan", "-q"], dir);
    let manifest = fs::read_to_string(dir.join("scan/manifest.json")).unwrap();
    assert!(manifest.contains("family-03"));
    let warnings = fs::read_to_string(dir.join("scan/scan_warnings.csv")).unwrap();
    assert!(warnings.contains("empty.bin"));
}

#[test]
fn report_renders_figures() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    ok(
        &["run-all-levels", "--corpus", "corpus", "--levels", "1,4", "--max-models", "2", "--learners", "knn,svm", "--out", "res", "-q"],
        dir,
    );
    ok(&["report", "--results", "res", "--out", "fig", "-q"], dir);
    let files = listing(&dir.join("fig"));
    assert!(files.contains(&"summary.txt".to_string()));
    assert!(files.iter().filter(|f| f.ends_with(".svg")).count() >= 4);
    let bad = bytegram(&["report", "--results", "res", "--out", "fig2", "--figures", "sweeps"], dir);
    assert!(!bad.status.success());
}

#[test]
fn sweeps_and_ngram_comparison_write_tables() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    let common = ["--corpus", "corpus", "--max-models", "1", "--out", "sw", "-q"];
    let mut rf = vec!["sweep-rf-depth", "--depths", "2,4", "--levels", "1,2"];
    rf.extend(common);
    ok(&rf, dir);
    let table = fs::read_to_string(dir.join("sw/rf_depth.csv")).unwrap();
    assert!(table.starts_with("level,depth,high,avg,low,count\n"));
    assert_eq!(table.lines().count(), 1 + 4);

    let mut mlp = vec!["sweep-mlp-alpha", "--alphas", "0.01", "--levels", "1", "--mlp-max-iter", "20"];
    mlp.extend(common);
    ok(&mlp, dir);
    assert!(dir.join("sw/mlp_alpha.csv").exists());

    let mut cmp = vec!["compare-ngrams", "--ns", "2,3", "--levels", "1", "--learners", "knn"];
    cmp.extend(common);
    ok(&cmp, dir);
    let table = fs::read_to_string(dir.join("sw/ngram_comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 2);
    assert!(dir.join("sw/n3/summary.csv").exists());
}
