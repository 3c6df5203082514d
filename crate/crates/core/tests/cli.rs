use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use byzline::trace::{EventKind, Trace};
use tempfile::TempDir;

const CONFIG: &str = r#"
n = 4
f = 1
k = 2
seed = 3
max_steps = 20000

[experiments]
seeds = 3

[experiments.grid]
rule = ["paper-3f1", "naive-trim"]
n = [4, 5]
"#;

fn byzline(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_byzline"))
        .args(args)
        .current_dir(dir)
        .env("BYZLINE_OUT_DIR", dir.join("default-out"))
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn setup() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sim.toml"), CONFIG).unwrap();
    dir
}

#[test]
fn run_writes_trace_and_summary() {
    let dir = setup();
    let o = byzline(
        dir.path(),
        &["run", "sim.toml", "--out", "t.jsonl", "--summary", "s.json"],
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    let trace = Trace::read_jsonl(&fs::read(dir.path().join("t.jsonl")).unwrap()[..]).unwrap();
    assert!(!trace.events.is_empty());
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
}

#[test]
fn identical_invocations_are_byte_identical() {
    let dir = setup();
    for name in ["a", "b"] {
        let out = format!("{name}.jsonl");
        let sum = format!("{name}.json");
        let o = byzline(
            dir.path(),
            &["run", "sim.toml", "--out", &out, "--summary", &sum],
        );
        assert_eq!(code(&o), 0);
    }
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_eq!(read("a.json"), read("b.json"));
}

#[test]
fn run_defaults_to_env_out_dir() {
    let dir = setup();
    let o = byzline(dir.path(), &["run", "sim.toml", "--seed", "8"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(dir.path().join("default-out/trace-8.jsonl").exists());
    assert!(dir.path().join("default-out/summary-8.json").exists());
}

#[test]
fn n_equal_3f_is_a_config_error() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "n = 3\nf = 1\n").unwrap();
    let o = byzline(dir.path(), &["run", "bad.toml"]);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("n > 3f"), "{}", text(&o));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "n = 4\nf = 1\nspeed = 3\n").unwrap();
    assert_eq!(code(&byzline(dir.path(), &["run", "bad.toml"])), 2);
}

#[test]
fn missing_config_is_io_error() {
    let dir = setup();
    assert_eq!(code(&byzline(dir.path(), &["run", "nope.toml"])), 3);
}

#[test]
fn unwritable_out_path_is_io_error() {
    let dir = setup();
    fs::write(dir.path().join("file"), "").unwrap();
    let o = byzline(dir.path(), &["run", "sim.toml", "--out", "file/t.jsonl"]);
    assert_eq!(code(&o), 3, "{}", text(&o));
}

#[test]
fn check_passes_on_a_fresh_trace() {
    let dir = setup();
    byzline(dir.path(), &["run", "sim.toml", "--out", "t.jsonl"]);
    let o = byzline(
        dir.path(),
        &["check", "t.jsonl", "--replay", "--min-events", "1"],
    );
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("cautious"));
}

#[test]
fn tampered_trace_fails_cautiousness() {
    let dir = setup();
    byzline(dir.path(), &["run", "sim.toml", "--out", "t.jsonl"]);
    let path = dir.path().join("t.jsonl");
    let mut trace = Trace::read_jsonl(&fs::read(&path).unwrap()[..]).unwrap();
    let e = trace
        .events
        .iter_mut()
        .find(|e| matches!(e.kind, EventKind::Compute { .. }))
        .unwrap();
    e.kind = EventKind::Compute {
        destination: 5000.0.try_into().unwrap(),
    };
    let mut buf = Vec::new();
    trace.write_jsonl(&mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    let o = byzline(dir.path(), &["check", "t.jsonl", "--checkers", "cautious"]);
    assert_eq!(code(&o), 1);
    assert!(
        text(&o).contains("cautious") && text(&o).contains("FAIL"),
        "{}",
        text(&o)
    );
}

#[test]
fn coverage_shortfall_fails() {
    let dir = setup();
    fs::write(
        dir.path().join("short.toml"),
        "n = 4\nf = 1\nmax_steps = 10\n",
    )
    .unwrap();
    byzline(dir.path(), &["run", "short.toml", "--out", "t.jsonl"]);
    let o = byzline(dir.path(), &["check", "t.jsonl", "--min-events", "100"]);
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(text(&o).contains("coverage"));
}

#[test]
fn corrupt_trace_is_io_error() {
    let dir = setup();
    fs::write(dir.path().join("t.jsonl"), "{not json\n").unwrap();
    assert_eq!(code(&byzline(dir.path(), &["check", "t.jsonl"])), 3);
}

#[test]
fn unknown_checker_is_usage_error() {
    let dir = setup();
    byzline(dir.path(), &["run", "sim.toml", "--out", "t.jsonl"]);
    assert_eq!(
        code(&byzline(
            dir.path(),
            &["check", "t.jsonl", "--checkers", "bogus"]
        )),
        2
    );
}

#[test]
fn sweep_then_report() {
    let dir = setup();
    let o = byzline(dir.path(), &["sweep", "sim.toml", "--out", "res"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let runs = fs::read_to_string(dir.path().join("res/runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 12);
    let agg = fs::read_to_string(dir.path().join("res/aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 5);

    let o = byzline(dir.path(), &["report", "res", "--series", "series.csv"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 5);
    let series = fs::read_to_string(dir.path().join("series.csv")).unwrap();
    assert!(series.starts_with("grid_key,seed,step,ud_diameter"));

    let o = byzline(dir.path(), &["report", "res", "--format", "text"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("convergence_rate"));
}

#[test]
fn sweep_seeds_flag_overrides_file() {
    let dir = setup();
    let o = byzline(
        dir.path(),
        &["sweep", "sim.toml", "--seeds", "5", "--out", "res"],
    );
    assert_eq!(code(&o), 0);
    let runs = fs::read_to_string(dir.path().join("res/runs.jsonl")).unwrap();
    assert_eq!(runs.lines().count(), 20);
}

#[test]
fn zero_seeds_is_usage_error() {
    let dir = setup();
    assert_eq!(
        code(&byzline(dir.path(), &["sweep", "sim.toml", "--seeds", "0"])),
        2
    );
}

#[test]
fn report_on_empty_dir_is_usage_error() {
    let dir = setup();
    fs::create_dir(dir.path().join("empty")).unwrap();
    assert_eq!(code(&byzline(dir.path(), &["report", "empty"])), 2);
}

#[test]
fn report_flags_mixed_versions() {
    let dir = setup();
    byzline(
        dir.path(),
        &["sweep", "sim.toml", "--seeds", "2", "--out", "res"],
    );
    let runs = fs::read_to_string(dir.path().join("res/runs.jsonl")).unwrap();
    let first = runs.lines().next().unwrap();
    let mut old: serde_json::Value = serde_json::from_str(first).unwrap();
    old["code_version"] = "byzline-0.0.1".into();
    fs::write(dir.path().join("res/old.jsonl"), format!("{old}\n")).unwrap();
    let o = byzline(dir.path(), &["report", "res"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mixed code versions"));
}
