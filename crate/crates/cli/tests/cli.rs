use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TIMESTAMP: &str = "20250101_120000";

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn mathtrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mathtrace"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a config into `dir` that points at the fixtures, with `extra`
/// lines appended to the top-level table.
fn write_config(dir: &Path, cache: &Path, corpus: &Path, extra: &str) -> PathBuf {
    let f = fixtures();
    let text = format!(
        r#"alpha = 0.5
output_dir = "out"
cache_dir = {cache:?}
exam = {exam:?}
{extra}

[endpoint]
url = "http://127.0.0.1:9"
model = "fixture-model"
temperature = 0.0
retries = 1

[embedding]
provider = "hash"

[retrieval]
corpus_dir = {corpus:?}
manifest = {manifest:?}
chunk_size = 120
overlap = 30
top_k = 3
token_budget = 200
"#,
        exam = f.join("exam/calc3_exam1.md"),
        manifest = f.join("contextual/manifest.txt"),
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn fixture_config(dir: &Path) -> PathBuf {
    write_config(dir, &fixtures().join("cache"), &fixtures().join("corpus"), "")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn replayed_compare_succeeds_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(dir.path());
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = mathtrace(&[
            "--config", s(&config), "--replay-only", "--out", s(&out), "--timestamp", TIMESTAMP, "compare",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("| Calc III | Exam I | C |"), "{stdout}");
        runs.push(std::fs::read(out.join("exam_metrics.csv")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(String::from_utf8_lossy(&runs[0]).lines().count(), 4);
}

#[test]
fn parallelism_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(dir.path());
    let mut tables = Vec::new();
    for p in ["1", "8"] {
        let out = dir.path().join(p);
        let o = mathtrace(&[
            "--config", s(&config), "--replay-only", "--parallelism", p, "--out", s(&out), "--timestamp", TIMESTAMP,
            "exam",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        tables.push(std::fs::read(out.join("exam_metrics.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn analyze_single_question() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(dir.path());
    let out = dir.path().join("out");
    let o = mathtrace(&[
        "--config", s(&config), "--replay-only", "--out", s(&out), "--timestamp", TIMESTAMP, "analyze", "--question",
        "grad_q1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("grad_q1: robustness "));
    assert!(std::fs::read_dir(&out).unwrap().count() > 0);
}

#[test]
fn missing_corpus_in_compare_is_partial() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &fixtures().join("cache"), &dir.path().join("nowhere"), "");
    let out = dir.path().join("out");
    let o = mathtrace(&["--config", s(&config), "--replay-only", "--out", s(&out), "--timestamp", TIMESTAMP, "compare"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("nowhere"));
    let csv = std::fs::read_to_string(out.join("exam_metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn replay_miss_is_partial_not_a_crash() {
    let dir = tempfile::tempdir().unwrap();
    let empty = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), empty.path(), &fixtures().join("corpus"), "");
    let o = mathtrace(&["--config", s(&config), "--replay-only", "--out", s(&dir.path().join("out")), "exam"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("grad_q1 failed"), "{}", stderr(&o));
}

#[test]
fn configuration_problems_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(dir.path());

    let o = mathtrace(&["--config", s(&config), "--alpha", "1.5", "--replay-only", "exam"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = mathtrace(&["--config", s(&dir.path().join("absent.toml")), "exam"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "alpha = [oops").unwrap();
    let o = mathtrace(&["--config", s(&bad), "exam"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = mathtrace(&["--config", s(&config), "--replay-only", "exam", "--exam", s(&dir.path().join("none.md"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let o = mathtrace(&["--config", s(&config), "--replay-only", "analyze", "--question", "no_such_q"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn flow_command_prints_markdown_json_and_dot() {
    let dir = tempfile::tempdir().unwrap();
    let response = fixtures().join("solutions/limit_factor.txt");
    let dot = dir.path().join("g.dot");
    let o = mathtrace(&["flow", s(&response), "--dot", s(&dot)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!o.stdout.is_empty());
    assert!(std::fs::read_to_string(&dot).unwrap().starts_with("digraph"));

    let o = mathtrace(&["flow", s(&response), "--format", "json"]);
    assert_eq!(code(&o), 0);
    let json = String::from_utf8_lossy(&o.stdout);
    for op in ["substitution", "factoring", "simplification", "limit"] {
        assert!(json.contains(op), "{op} missing from {json}");
    }

    let o = mathtrace(&["flow", s(&dir.path().join("missing.txt"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn ingest_writes_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture_config(dir.path());
    let snap = dir.path().join("index.json");
    let o = mathtrace(&["--config", s(&config), "ingest", "--snapshot", s(&snap)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("indexed 12 chunks from 2 documents"));
    assert!(snap.exists());
}
