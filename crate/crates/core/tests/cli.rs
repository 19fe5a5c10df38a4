use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pointbc"));
    c.env_remove("POINTBC_OUT").env("POINTBC_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[test]
fn help_documents_every_flag() {
    for cmd in ["demo-gen", "build-data", "train", "train-baseline", "eval", "report", "serve", "pipeline"] {
        let o = run(&[cmd, "--help"]);
        assert!(o.status.success(), "{cmd}");
        let h = text(&o);
        for flag in ["--config", "--seed", "--out", "--dry-run"] {
            assert!(h.contains(flag), "{cmd} --help lacks {flag}");
        }
    }
    assert!(text(&run(&["pipeline", "--help"])).contains("--stage"));
    assert!(text(&run(&["eval", "--help"])).contains("--protocol"));
    assert!(text(&run(&["--help"])).contains("POINTBC_LOG"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "task = \"pick_object\"\nunknown_key = 3\n").unwrap();
    let o = run(&["train", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));

    std::fs::write(&bad, "[train]\nwidth = 30\nheads = 4\n").unwrap();
    let o = run(&["pipeline", "--config", bad.to_str().unwrap(), "--dry-run"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    assert!(text(&o).contains("divisible"));

    let o = run(&["train", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["pipeline", "--stage", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stage_failure_exits_3_with_stage_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    let t = text(&o);
    assert!(t.contains("stage train failed"), "{t}");
    assert!(t.contains(dir.path().join("manifests").join("train.json").to_str().unwrap()), "{t}");
}

#[test]
fn dry_run_prints_plan_and_touches_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    let o = bin()
        .args(["pipeline", "--config", repo_file("configs/default.toml").to_str().unwrap(), "--dry-run"])
        .env("POINTBC_OUT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o));
    let t = text(&o);
    assert!(t.contains(root.to_str().unwrap()), "{t}");
    for stage in ["demo-gen", "build-data", "train", "train-baseline", "eval", "report"] {
        assert!(t.contains(&format!("{stage}:")), "{t}");
    }
    assert!(!root.exists());
}

#[test]
fn empty_report_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["report", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    let md = std::fs::read_to_string(dir.path().join("report/report.md")).unwrap();
    assert!(md.contains("No results."));
}

#[test]
fn tiny_config_runs_end_to_end_within_budget_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = repo_file("configs/tiny.toml");
    let cfg = cfg.to_str().unwrap();
    let start = Instant::now();
    let o = run(&["pipeline", "--config", cfg, "--out", out]);
    let elapsed = start.elapsed();
    assert!(o.status.success(), "{}", text(&o));
    assert!(elapsed < Duration::from_secs(600), "tiny pipeline took {elapsed:?}");
    let md = std::fs::read_to_string(dir.path().join("report/report.md")).unwrap();
    assert!(md.contains("| point | in_domain |"), "{md}");

    let again = run(&["pipeline", "--config", cfg, "--out", out]);
    assert!(again.status.success());
    let t = text(&again);
    assert_eq!(t.matches("up to date").count(), 5, "{t}");

    // single-policy evaluation from a protocol file
    let proto = dir.path().join("proto.toml");
    std::fs::write(&proto, "task_id = \"pick_object\"\ncondition = \"distractor\"\nn_trials = 3\n").unwrap();
    let params = dir.path().join("models/point.params");
    let o = run(&["eval", "--config", cfg, "--out", out, "--params", params.to_str().unwrap(), "--protocol", proto.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(dir.path().join("eval/point-distractor.json").exists());
    assert!(dir.path().join("manifests/eval-point-distractor.json").exists());
}
