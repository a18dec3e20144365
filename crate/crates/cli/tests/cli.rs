use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use distr_cli::{curve, curves, exit_code, export_replay, metrics, run, ConfigError, ExperimentConfig, RESOLVED_CONFIG};

const SMOKE: &str = include_str!("../../../configs/smoke.toml");
const DESK: &str = include_str!("../../../configs/desk.toml");

fn smoke(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(SMOKE).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// Two tasks through the full DISTR pipeline with very small budgets.
fn tiny_distr(out: &Path) -> ExperimentConfig {
    let mut cfg = smoke(out);
    cfg.method = "distr".into();
    cfg.diffusion.epochs = 20;
    cfg.diffusion.hidden = vec![32, 32];
    cfg.agent.n_traj = 5;
    cfg.agent.bc_epochs = 5;
    cfg.agent.bc_batch_size = 32;
    cfg.agent.n_eval = 4;
    cfg.priority.n_repeats = 1;
    cfg
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_distr"))
}

#[test]
fn shipped_configs_parse_and_round_trip() {
    for text in [SMOKE, DESK] {
        let cfg = ExperimentConfig::parse(text).unwrap();
        let back = ExperimentConfig::parse(&cfg.resolved()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.resolved(), cfg.resolved());
    }
    let d = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::parse("").unwrap(), d);
    assert_eq!(ExperimentConfig::parse(&d.resolved()).unwrap(), d);
}

#[test]
fn unknown_key_is_named_with_its_line() {
    let err = ExperimentConfig::parse("method = \"ewc\"\n\n[ewc]\nlambada = 3.0\n").unwrap_err();
    assert!(err.0.contains("lambada"), "{err}");
    assert!(err.0.contains("line 4"), "{err}");
    let err = ExperimentConfig::parse("colour = 1\n").unwrap_err();
    assert!(err.0.contains("colour"));
    assert!(ExperimentConfig::parse("method = \"distr\"\nseeds = []\n").is_err());
    assert!(ExperimentConfig::parse("[suite]\nnum_tasks = 0\n").is_err());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "method = \"finetune\"\n[sac]\nbudget_stepz = 10\n").unwrap();
    let out = bin().arg("run").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget_stepz"));

    let out = bin().arg("curves").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let stage_err = distr_core::Error::Stage {
        stage: "fit_denoiser",
        task: 1,
        source: Box::new(distr_core::Error::NonFinite("loss")),
    };
    let e = anyhow::Error::from(stage_err).context("seed 0");
    assert_eq!(exit_code(&e), 1);
    assert!(format!("{e:#}").contains("fit_denoiser"));
    assert_eq!(exit_code(&anyhow::Error::from(ConfigError("x".into()))), 2);
}

#[test]
fn smoke_run_is_complete_deterministic_and_reproducible_from_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let t0 = Instant::now();
    let root = run(&smoke(&a)).unwrap();
    assert!(t0.elapsed().as_secs() < 120);
    run(&smoke(&b)).unwrap();
    // rerun from the resolved config of the first run, redirected
    let mut again = ExperimentConfig::load(&root.join(RESOLVED_CONFIG)).unwrap();
    again.output_dir = c.clone();
    run(&again).unwrap();

    for name in ["success_matrix.csv", "metrics.json", "priority_records.csv", "stage_log.csv"] {
        let first = read(a.join("seed_0").join(name));
        assert_eq!(first, read(b.join("seed_0").join(name)), "{name}");
        assert_eq!(first, read(c.join("seed_0").join(name)), "{name}");
    }
    for f in ["config.resolved", "summary.json", "seed_0/checkpoints/policy_after_task_1.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    let tmp_left = walk(&a).into_iter().filter(|p| p.extension().is_some_and(|e| e == "tmp")).count();
    assert_eq!(tmp_left, 0);

    let metrics_json: serde_json::Value = serde_json::from_str(&read(a.join("seed_0/metrics.json"))).unwrap();
    for key in ["average_performance", "forward_transfer", "forgetting", "per_task_FT", "per_task_F"] {
        assert!(metrics_json.get(key).is_some(), "{key}");
    }
    assert_eq!(metrics_json["method"], "finetune");

    let files = curves(&a).unwrap();
    let csv = read(&files[0]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "after_task,avg_success_seen,avg_success_all");
    assert_eq!(lines.len(), 1 + 2);
    assert!(read(&files[1]).starts_with("<svg"));

    let before = read(a.join("seed_0/metrics.json"));
    let summary = metrics(&a).unwrap();
    assert_eq!(summary.seeds, vec![0]);
    assert_eq!(read(a.join("seed_0/metrics.json")), before);
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn incomplete_run_is_rejected_by_curves() {
    let dir = tempfile::tempdir().unwrap();
    let seed = dir.path().join("seed_0");
    std::fs::create_dir_all(&seed).unwrap();
    std::fs::write(seed.join("success_matrix.csv"), "after_task,task_0,task_1\n-1,0,0\n0,1,0\n").unwrap();
    let err = curve(dir.path()).unwrap_err();
    assert!(format!("{err:#}").contains("incomplete"));
}

#[test]
fn single_task_curve_is_the_diagonal_entry() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("success_matrix.csv"), "after_task,task_0\n-1,0\n0,0.9\n").unwrap();
    let c = curve(dir.path()).unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!((c[0].seen, c[0].all), (0.9, 0.9));
}

#[test]
fn distr_run_exports_replay_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_distr(&dir.path().join("run"));
    let root = run(&cfg).unwrap();
    let seed = root.join("seed_0");
    for f in [
        "checkpoints/denoiser_after_task_0.json",
        "checkpoints/denoiser_after_task_1.json",
        "skilled/0_real.csv",
        "skilled/0_generated.csv",
        "skilled/1_generated.csv",
    ] {
        assert!(seed.join(f).exists(), "{f}");
    }
    let cov = export_replay(&root, 0).unwrap();
    assert_eq!(cov.len(), 1);
    let merged = read(seed.join("replay_task_0.csv"));
    let h = cfg.suite.horizon;
    assert_eq!(merged.lines().count() - 1, (cov[0].n_real + cov[0].n_generated) * h);
    assert!(merged.lines().skip(1).any(|l| l.ends_with(",real")));
    assert!(merged.lines().skip(1).any(|l| l.ends_with(",generated")));
    let sidecar: serde_json::Value = serde_json::from_str(&read(seed.join("coverage.json"))).unwrap();
    assert_eq!(sidecar["mmd2"].as_f64().unwrap(), cov[0].mmd2);

    // a generated export identical to the real one has no discrepancy
    let real = read(seed.join("skilled/0_real.csv"));
    std::fs::write(seed.join("skilled/0_generated.csv"), real.replace(",real\n", ",generated\n")).unwrap();
    let cov = export_replay(&seed, 0).unwrap();
    assert!(cov[0].mmd2.abs() < 1e-9, "{}", cov[0].mmd2);
}
