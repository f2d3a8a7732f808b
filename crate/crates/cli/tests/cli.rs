use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_beliefroute"))
}

fn run_config(dir: &Path, toml: &str) -> Output {
    let cfg = dir.join("config.toml");
    fs::write(&cfg, toml).unwrap();
    bin()
        .arg("run")
        .arg(&cfg)
        .arg("--output-dir")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

const MINIMAL: &str = r#"
experiment = "episode"

[[roster]]
id = "solo"
theta = 1.0
"#;

#[test]
fn minimal_episode_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), MINIMAL);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let row = stdout.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cols[..3], ["0", "success", "1"], "{stdout}");
    for f in [
        "events.jsonl",
        "metrics.csv",
        "summary.json",
        "beliefs.json",
    ] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn regret_sweep_rows() {
    let dir = tempfile::tempdir().unwrap();
    let toml = r#"
experiment = "regret_sweep"
seeds = 4
horizon = 200

[[roster]]
id = "good"
theta = 0.9

[[roster]]
id = "bad"
theta = 0.5

[[sweep]]
eps_fp = 0.0
eps_fn = 0.0

[[sweep]]
eps_fp = 0.25
eps_fn = 0.25

[[sweep]]
eps_fp = 0.375
eps_fn = 0.375
"#;
    let out = run_config(dir.path(), toml);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
    let deltas: std::collections::BTreeSet<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap())
        .collect();
    assert_eq!(deltas.into_iter().collect::<Vec<_>>(), ["0.25", "0.5", "1"]);
}

#[test]
fn missing_roster_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), "experiment = \"episode\"\n");
    assert_eq!(out.status.code(), Some(1));
    assert!(
        text(&out.stderr).contains("roster"),
        "{}",
        text(&out.stderr)
    );
}

#[test]
fn zero_delta_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let toml = format!("{MINIMAL}\n[[sweep]]\neps_fp = 0.6\neps_fn = 0.4\n");
    let out = run_config(dir.path(), &toml);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    fs::write(&cfg, MINIMAL).unwrap();
    let out = bin()
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--seeds",
            "3",
            "--seed-offset",
            "7",
            "--output-dir",
        ])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("o/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

const STREAM: &str = r#"
experiment = "efficiency"
seeds = 2

[task_stream]
count = 15

[[roster]]
id = "good"
theta = 0.9

[[roster]]
id = "weak"
theta = 0.3

[[roster]]
id = "weaker"
theta = 0.2
"#;

#[test]
fn outputs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_config(a.path(), STREAM).status.code(), Some(0));
    assert_eq!(run_config(b.path(), STREAM).status.code(), Some(0));
    for f in [
        "events.jsonl",
        "metrics.csv",
        "summary.json",
        "beliefs.json",
    ] {
        let x = fs::read(a.path().join("out").join(f)).unwrap();
        let y = fs::read(b.path().join("out").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn fresh_log_replays_clean() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_config(dir.path(), STREAM).status.code(), Some(0));
    let out = bin()
        .arg("replay")
        .arg(dir.path().join("out/events.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));
    assert!(text(&out.stdout).contains("replay matches"));
}

#[test]
fn edited_alpha_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_config(dir.path(), STREAM).status.code(), Some(0));
    let log = dir.path().join("out/events.jsonl");
    let original = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = original.lines().map(str::to_owned).collect();
    let idx = lines
        .iter()
        .position(|l| l.contains("\"event\":\"round\""))
        .unwrap();
    lines[idx] = bump_alpha(&lines[idx]);
    fs::write(&log, lines.join("\n") + "\n").unwrap();

    let out = bin().arg("replay").arg(&log).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stdout = text(&out.stdout);
    assert!(
        stdout.contains("mismatch: episode 0 round 1 field alpha_after"),
        "{stdout}"
    );
}

#[test]
fn empty_log_is_a_failure_episode() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.jsonl");
    fs::write(&log, "").unwrap();
    let out = bin().arg("replay").arg(&log).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(
        text(&out.stdout).contains("Failure"),
        "{}",
        text(&out.stdout)
    );
}

#[test]
fn corrupt_log_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.jsonl");
    fs::write(&log, "{\"event\":\"end\"\nnot json\n").unwrap();
    let out = bin().arg("replay").arg(&log).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(
        text(&out.stderr).contains("line 1"),
        "{}",
        text(&out.stderr)
    );
}

#[test]
fn beliefs_show_lists_agents() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_config(dir.path(), STREAM).status.code(), Some(0));
    let out = bin()
        .args(["beliefs", "show"])
        .arg(dir.path().join("out/beliefs.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = text(&out.stdout);
    for id in ["good", "weak", "weaker"] {
        assert!(stdout.contains(id), "{stdout}");
    }
}

/// Adds 1 to the first `alpha_after` value of a JSON line.
fn bump_alpha(line: &str) -> String {
    let key = "\"alpha_after\":";
    let start = line.find(key).unwrap() + key.len();
    let end = start + line[start..].find([',', '}']).unwrap();
    let v: f64 = line[start..end].parse().unwrap();
    format!("{}{}{}", &line[..start], v + 1.0, &line[end..])
}

#[test]
fn sample_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = fs::read_to_string(&path).unwrap();
            beliefroute::ExperimentConfig::from_toml(&text)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert_eq!(n, 6);
}
