use std::path::Path;
use std::process::{Command, Output};

fn hspde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hspde"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

// small enough to run in a second, large enough for both estimators
const SMALL: &[&str] = &["--steps", "256", "--replicas", "4"];

fn run_small(preset: &str, dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--preset", preset, "--output-dir", path(dir)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    hspde(&args)
}

#[test]
fn presets_catalogue() {
    let out = hspde(&["presets"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for name in [
        "laplacian-d1",
        "laplacian-d2",
        "varcoef-d1",
        "heat-white-d1-baseline",
        "colored-d1-thm31",
        "fractional-alpha-sweep",
    ] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
    let shown = hspde(&["presets", "--show", "heat-white-d1-baseline"]);
    let cfg: serde_json::Value = serde_json::from_slice(&shown.stdout).unwrap();
    assert_eq!(cfg["plan"]["seed"], 2024);
    assert_eq!(code(&hspde(&["presets", "--show", "missing"])), 1);
}

#[test]
fn region_boundary_starts_on_gamma_axis() {
    let out = hspde(&["region", "--theorem", "prop32", "--d", "1", "--p", "4", "--q", "8", "--samples", "5"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("beta,gamma_max,theorem,budget"));
    assert_eq!(lines.next(), Some("0,0.25,prop32,0.125"));
    assert_eq!(text.lines().count(), 6);
    let grid = hspde(&["region", "--theorem", "prop32", "--p", "4", "--q", "8", "--vertices", "5"]);
    assert_eq!(stdout(&grid).lines().count(), 26);
}

#[test]
fn run_is_deterministic_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = run_small("heat-white-d1-baseline", d, &["--persist-trajectories"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "estimates.csv"), read(&b, "estimates.csv"));
    assert_eq!(read(&a, "trajectories.traj"), read(&b, "trajectories.traj"));

    let manifest: serde_json::Value = serde_json::from_slice(&read(&a, "manifest.json")).unwrap();
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["config"]["plan"]["seed"], 2024);
    let stages: Vec<&str> = manifest["stages"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(stages, ["build", "plan", "hypotheses", "simulate", "estimate", "verify"]);
    assert!(manifest["runs"][0]["derived"]["budget"].as_f64().unwrap() > 0.12);

    let region = hspde(&["export", "--run", path(&a), "--kind", "region"]);
    assert_eq!(stdout(&region).lines().nth(1).unwrap(), "0,0.25,prop32,0.125");
    let inc = hspde(&["export", "--run", path(&a), "--kind", "increments"]);
    assert!(stdout(&inc).starts_with("direction,lag,median_max_increment\n"));
    let traj = hspde(&["export", "--run", path(&a), "--kind", "trajectory"]);
    assert_eq!(code(&traj), 0);
    assert!(stdout(&traj).starts_with("replica,time_index,t,space_index,xi_1,u\n"));

    // estimating the stored container reproduces the run's table
    let est = dir.path().join("est.csv");
    let out = hspde(&["estimate", "--traj", path(&a.join("trajectories.traj")), "--out", path(&est)]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&est).unwrap(), read(&a, "estimates.csv"));
}

#[test]
fn export_of_missing_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = hspde(&["export", "--run", path(&dir.path().join("nothing")), "--kind", "region"]);
    assert_eq!(code(&out), 1);
    // a run without persisted trajectories cannot export them
    let run = dir.path().join("r");
    assert_eq!(code(&run_small("laplacian-d1", &run, &[])), 0);
    assert_eq!(code(&hspde(&["export", "--run", path(&run), "--kind", "trajectory"])), 1);
}

#[test]
fn simulate_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("u.traj");
    let mut args = vec!["simulate", "--preset", "colored-d1-thm31", "--out", path(&traj)];
    args.extend_from_slice(SMALL);
    let sim = hspde(&args);
    assert_eq!(code(&sim), 0, "{}", String::from_utf8_lossy(&sim.stderr));
    assert!(dir.path().join("u.traj.json").exists());

    let ok = hspde(&["verify", "--traj", path(&traj), "--theorem", "colored", "--q", "16", "--theta", "0.4", "--m", "8"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let verdict: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(verdict["pass"], true);
    assert_eq!(verdict["vertices"].as_array().unwrap().len(), 25);

    // provenance: the ensemble was not made for q = 8
    let wrong = hspde(&["verify", "--traj", path(&traj), "--theorem", "prop32", "--p", "4", "--q", "8"]);
    assert_eq!(code(&wrong), 1);
    // an inflated budget fails on the same ensemble
    let inflated = [
        "verify", "--traj", path(&traj), "--theorem", "prop32", "--p", "1000", "--q", "1000", "--unchecked",
    ];
    assert_eq!(code(&hspde(&inflated)), 2);
}

#[test]
fn hypothesis_failure_exits_3_with_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    // theta below the window (d/m + 1/q, d/2) = (0.1875, 0.5)
    std::fs::write(
        &cfg,
        r#"{"preset": "colored-d1-thm31", "noise": {"theta": 0.1}, "query": {"theta": 0.1}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = hspde(&["run", "--config", path(&cfg), "--output-dir", path(&out_dir)]);
    assert_eq!(code(&out), 3);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["outcome"], "hypothesis-fail");
    let last = manifest["stages"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["name"], "hypotheses");
    assert_eq!(last["status"], "failed");
    assert!(!out_dir.join("estimates.csv").exists());
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(code(&hspde(&["frobnicate"])), 1);
    assert_eq!(code(&hspde(&["run"])), 1);
    assert_eq!(code(&hspde(&["run", "--preset", "no-such"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"domain": {"dim": 1, "grid_size": 15, "mode_cutoff": 8},
            "operator": {"kind": "laplacian"},
            "noise": {"theta": 0, "truncation": 8, "g": {"kind": "identity"}},
            "plan": {"steps": 8, "replicas": 1}}"#,
    )
    .unwrap();
    let out = hspde(&["run", "--config", path(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn too_short_run_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    // 16 steps cannot support the temporal fit
    let out = hspde(&[
        "run", "--preset", "laplacian-d1", "--steps", "16", "--replicas", "2", "--output-dir", path(dir.path()),
    ]);
    assert_eq!(code(&out), 4);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["outcome"], "numerical-error");
    assert!(manifest["error"].as_str().unwrap().contains("stage estimate"));
}

#[test]
fn gamma_norm_and_fracpow_check() {
    let out = hspde(&["gamma-norm", "--kind", "identity", "--n", "4", "--samples", "20000", "--seed", "3"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let est: f64 = row[3].parse().unwrap();
    assert!((est - 2.0).abs() < 0.05, "{est}");

    let ok = hspde(&["fracpow-check", "--spectrum", "1,4,9"]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    assert_eq!(stdout(&ok).lines().count(), 1 + 3 * 2);
    let lap = hspde(&["fracpow-check"]);
    assert_eq!(code(&lap), 0, "{}", stdout(&lap));
    // far too few nodes to reach 1e-7
    let coarse = hspde(&["fracpow-check", "--nodes", "4", "--z", "0.5"]);
    assert_ne!(code(&coarse), 0);
}

#[test]
fn alpha_sweep_writes_per_alpha_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"preset": "fractional-alpha-sweep",
            "domain": {"grid_size": 128, "mode_cutoff": 128},
            "noise": {"truncation": 128},
            "plan": {"space_stride": 1},
            "alpha_sweep": [1.0, 2.0]}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("sweep");
    let mut args = vec!["run", "--config", path(&cfg), "--output-dir", path(&out_dir)];
    args.extend_from_slice(SMALL);
    let out = hspde(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert!(out_dir.join("alpha-1/estimates.csv").exists());
    assert!(out_dir.join("alpha-2/verdict.json").exists());
    assert_eq!(code(&hspde(&["export", "--run", path(&out_dir), "--kind", "region"])), 1);
    assert_eq!(code(&hspde(&["export", "--run", path(&out_dir.join("alpha-1")), "--kind", "region"])), 0);
}
