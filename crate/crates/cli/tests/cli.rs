use std::path::Path;
use std::process::{Command, Output};

use mdp_core::{Sampler, Scenario};

const BIN: &str = env!("CARGO_BIN_EXE_mdp");

fn mdp(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("MDP_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn mdp_in(out: &Path, args: &[&str]) -> Output {
    let mut all = args.to_vec();
    let out = out.to_str().unwrap();
    all.extend(["--out", out]);
    mdp(&all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn parse_row(line: &str) -> Vec<f64> {
    line.split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect()
}

#[test]
fn edit_writes_one_metrics_row_and_a_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mdp_in(tmp.path(), &["--preset", "pni-default", "edit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("seed=42 config_sha256="), "{text}");
    let csv = read(tmp.path(), "edit.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "kind,schedule,t_max,t_min,weight,beta,seed,layout_preservation,semantic_alignment,ab_gap"
    );
    assert_eq!(lines.len(), 2);
    assert!(
        lines[1].starts_with("PNI,constant,50,30,1.0000000000000000e0,,42,"),
        "{}",
        lines[1]
    );
    let svg = read(tmp.path(), "edit.svg");
    for label in ["path A", "path B", "PNI edit"] {
        assert!(svg.contains(label), "{label}");
    }
}

#[test]
fn prompt_switch_demo_runs_from_a_to_b() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mdp_in(tmp.path(), &["demo", "--scenario", "prompt-switch"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(tmp.path(), "prompt_switch.csv");
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 51);
    assert!(rows[0].starts_with("50,") && rows[50].starts_with("0,"));

    let sc = Scenario::demo();
    let s = Sampler::new(&sc.model, &sc.grid, &sc.schedule).unwrap();
    let x_t = sc.initial_noise(42);
    let a = s.generate(&x_t, &sc.source, None).unwrap();
    let b = s.generate(&x_t, &sc.target, None).unwrap();
    assert_eq!(parse_row(rows[0]), a.endpoint().0);
    assert_eq!(parse_row(rows[50]), b.endpoint().0);
}

#[test]
fn layout_grid_demo_is_byte_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<String> = ["a", "b"]
        .iter()
        .map(|n| {
            let dir = tmp.path().join(n);
            let o = mdp_in(&dir, &["demo", "--scenario", "layout-grid"]);
            assert!(o.status.success(), "{}", stderr(&o));
            read(&dir, "sweep.csv")
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0].lines().count(), 26);
    let other_seed = tmp.path().join("c");
    assert!(mdp_in(
        &other_seed,
        &["--set", "seed=43", "demo", "--scenario", "layout-grid"]
    )
    .status
    .success());
    assert_ne!(read(&other_seed, "sweep.csv"), runs[0]);
}

#[test]
fn sweep_axes_from_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mdp_in(
        tmp.path(),
        &[
            "sweep",
            "--kinds",
            "G,IDI",
            "--t-max",
            "50",
            "--spans",
            "10,20",
            "--betas",
            "-0.5,-0.1",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(tmp.path(), "sweep.csv");
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows
        .iter()
        .filter(|r| r.starts_with("IDI"))
        .all(|r| r.split(',').nth(5) == Some("")));
    assert!(rows.iter().filter(|r| r.starts_with("G,")).all(|r| !r
        .split(',')
        .nth(5)
        .unwrap()
        .is_empty()));
}

#[test]
fn generate_and_invert_write_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mdp_in(tmp.path(), &["generate", "--condition", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(tmp.path(), "generate.csv").lines().count(), 52);
    let o = mdp_in(
        tmp.path(),
        &[
            "--set",
            "sampler.guidance_scale=2",
            "invert",
            "--x0",
            "0.4,-1.1",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("null_text_error="));
    assert_eq!(read(tmp.path(), "null_text.csv").lines().count(), 51);
    assert!(tmp.path().join("invert.svg").exists());
    let o = mdp_in(tmp.path(), &["demo", "--scenario", "inversion"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(tmp.path(), "inversion.csv").lines().count(), 4);
}

#[test]
fn config_round_trips_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let first = mdp(&["--set", "manipulation.schedule.amplitude=0.7", "config"]);
    assert!(first.status.success());
    let path = tmp.path().join("run.json");
    std::fs::write(&path, &first.stdout).unwrap();
    let second = mdp(&["--config", path.to_str().unwrap(), "config"]);
    assert_eq!(first.stdout, second.stdout);
    assert!(stdout(&first).contains("\"amplitude\": 0.7"));
}

#[test]
fn validation_errors_exit_1_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    for args in [
        vec!["--set", "manipulation.kind=G", "edit"],
        vec!["--set", "sampler.bogus=1", "edit"],
        vec!["--preset", "nope", "edit"],
        vec!["--set", "manipulation.schedule.t_min=60", "edit"],
        vec!["sweep", "--kinds", "XYZ"],
        vec!["invert", "--x0", "1,2,3"],
        vec!["--remote", "ftp:x", "edit"],
    ] {
        let o = mdp_in(&dir, &args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        let v: serde_json::Value = serde_json::from_str(err.trim_end()).unwrap();
        assert_eq!(v["error"], "validation");
        assert!(!dir.exists());
    }
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "extra": true}"#).unwrap();
    assert_eq!(
        mdp(&["--config", bad.to_str().unwrap(), "edit"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn runtime_failure_exits_2_and_removes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let remote = format!("cmd:{BIN} serve --max-requests 30");
    let o = mdp_in(&dir, &["--remote", &remote, "edit"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stderr(&o).trim_end()).unwrap();
    assert_eq!(v["error"], "runtime");
    assert!(v["message"].as_str().unwrap().contains("transport"), "{v}");
    assert!(!dir.exists());

    std::fs::create_dir(&dir).unwrap();
    std::fs::write(dir.join("keep.txt"), "x").unwrap();
    let o = mdp_in(&dir, &["--remote", &remote, "sweep"]);
    assert_eq!(o.status.code(), Some(2));
    let left: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(left, vec!["keep.txt"]);
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["demo", "--scenario", "prompt-switch"])
        .env("MDP_OUTPUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("prompt_switch.csv").exists());
}

#[test]
fn no_plots_beyond_two_dimensions() {
    let tmp = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "seed": 5,
        "model": {"d": 3, "m": 1, "components": [
            {"weight": 0.5, "base_mean": [1, 0, 0], "condition_map": [[1], [0], [0]], "variance": 0.3},
            {"weight": 0.5, "base_mean": [-1, 0, 1], "condition_map": [[0], [1], [0]], "variance": 0.2}
        ]},
        "conditions": {"null": [0], "source": "a", "target": "b", "named": {"a": [1], "b": [-1]}},
        "sampler": {"train_steps": 1000, "sample_steps": 20, "beta_min": 0.0001, "beta_max": 0.02},
        "manipulation": {"kind": "IDI", "schedule": {"kind": "linear", "t_min": 5, "t_max": 20, "amplitude": 0.8}},
        "output": {"formats": ["csv", "svg"]}
    });
    let path = tmp.path().join("d3.json");
    std::fs::write(&path, config.to_string()).unwrap();
    let out = tmp.path().join("out");
    let o = mdp_in(&out, &["--config", path.to_str().unwrap(), "edit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("edit.csv").exists());
    assert!(!out.join("edit.svg").exists());
}
