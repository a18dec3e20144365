//! Experiment runner: reads a TOML config, runs a continual-learning method
//! over every configured seed and writes a run directory.
//!
//! ```text
//! <output_dir>/config.resolved
//! <output_dir>/summary.json
//! <output_dir>/seed_<s>/success_matrix.csv, metrics.json, priority_records.csv,
//!                       stage_log.csv, sac_log_task_<k>.csv, checkpoints/, skilled/
//! ```

pub mod config;
mod plot;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use distr_core::method::{build_method, reference_scores, run_sequence, ArtifactSink};
use distr_core::metrics::{mmd, median_bandwidth, row_curve, step_rows, MetricsReport, SuccessMatrix};
use distr_core::tasksuite::trajectories_from_csv;
use distr_core::trajdiff::Normalizer;

pub use config::{ConfigError, ExperimentConfig, Reference};

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const REFERENCE_FILE: &str = "reference_scores.json";

/// Writes each artifact to a temporary sibling and renames it into place.
pub struct AtomicFileSink {
    root: PathBuf,
}

impl AtomicFileSink {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}

impl ArtifactSink for AtomicFileSink {
    fn write(&mut self, path: &str, contents: &str) -> distr_core::Result<()> {
        Ok(write_atomic(&self.root.join(path), contents)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub seeds: Vec<u64>,
    pub average_performance: MeanStd,
    pub forward_transfer: Option<MeanStd>,
    pub forgetting: MeanStd,
}

impl Summary {
    pub fn from_reports(method: &str, seeds: &[u64], reports: &[MetricsReport]) -> anyhow::Result<Self> {
        let ap: Vec<f64> = reports.iter().map(|r| r.average_performance).collect();
        let f: Vec<f64> = reports.iter().map(|r| r.forgetting).collect();
        let ft: Option<Vec<f64>> = reports.iter().map(|r| r.forward_transfer).collect();
        Ok(Self {
            method: method.to_string(),
            seeds: seeds.to_vec(),
            average_performance: MeanStd::of(&ap).context("no seed reports")?,
            forward_transfer: ft.and_then(|v| MeanStd::of(&v)),
            forgetting: MeanStd::of(&f).context("no seed reports")?,
        })
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

/// Runs one seed into `dir` and returns its metrics.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> anyhow::Result<MetricsReport> {
    let mcfg = cfg.method_config();
    let mut sink = AtomicFileSink::new(dir);
    let mut method = build_method(&cfg.method, &mcfg, &cfg.suite, seed)?;
    let outcome = run_sequence(method.as_mut(), &cfg.suite, cfg.agent.n_eval, seed, &mut sink)?;
    let refs = match cfg.metrics.reference {
        Reference::Train => {
            let r = reference_scores(&mcfg, &cfg.suite, cfg.agent.n_eval, seed)?;
            sink.write(REFERENCE_FILE, &to_json(&r))?;
            Some(r)
        }
        Reference::None => None,
    };
    let report = MetricsReport::compute(&outcome.method, &outcome.matrix, refs.as_deref())?;
    sink.write("metrics.json", &to_json(&report))?;
    Ok(report)
}

/// Runs every seed of `cfg` and returns the run directory.
pub fn run(cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    cfg.validate()?;
    let root = cfg.output_dir.clone();
    write_atomic(&root.join(RESOLVED_CONFIG), &cfg.resolved())
        .with_context(|| format!("writing {}", root.display()))?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let t0 = Instant::now();
        let report = run_seed(cfg, seed, &seed_dir(&root, seed)).with_context(|| format!("seed {seed}"))?;
        eprintln!(
            "seed {seed}: average_performance {:.3} forgetting {:.3} ({:.1}s)",
            report.average_performance,
            report.forgetting,
            t0.elapsed().as_secs_f64()
        );
        reports.push(report);
    }
    let summary = Summary::from_reports(&cfg.method, &cfg.seeds, &reports)?;
    write_atomic(&root.join("summary.json"), &to_json(&summary))?;
    Ok(root)
}

pub fn run_file(path: &Path) -> anyhow::Result<PathBuf> {
    run(&ExperimentConfig::load(path)?)
}

/// Seed directories under a run root, or the directory itself if it
/// already is one.
pub fn seed_dirs(run_dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if run_dir.join("success_matrix.csv").exists() {
        return Ok(vec![run_dir.to_path_buf()]);
    }
    let mut dirs: Vec<(u64, PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(run_dir).with_context(|| format!("reading {}", run_dir.display()))?;
    for e in entries {
        let path = e?.path();
        let seed = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("seed_"))
            .and_then(|s| s.parse().ok());
        if let (Some(seed), true) = (seed, path.is_dir()) {
            dirs.push((seed, path));
        }
    }
    if dirs.is_empty() {
        bail!("{} contains no seed runs", run_dir.display());
    }
    dirs.sort();
    Ok(dirs.into_iter().map(|(_, p)| p).collect())
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn complete_matrix(dir: &Path) -> anyhow::Result<SuccessMatrix> {
    let m = SuccessMatrix::from_csv(&read(&dir.join("success_matrix.csv"))?)
        .with_context(|| format!("parsing success matrix in {}", dir.display()))?;
    if m.rows_completed() < m.num_tasks() {
        bail!(
            "run in {} is incomplete: {} of {} tasks finished",
            dir.display(),
            m.rows_completed(),
            m.num_tasks()
        );
    }
    Ok(m)
}

fn find_config(dir: &Path) -> anyhow::Result<ExperimentConfig> {
    for d in dir.ancestors().take(2) {
        let p = d.join(RESOLVED_CONFIG);
        if p.exists() {
            return Ok(ExperimentConfig::load(&p)?);
        }
    }
    bail!("no {RESOLVED_CONFIG} found for {}", dir.display())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub after_task: usize,
    pub seen: f64,
    pub all: f64,
}

/// Seed-averaged learning curve; one point per finished task.
pub fn curve(run_dir: &Path) -> anyhow::Result<Vec<CurvePoint>> {
    let dirs = seed_dirs(run_dir)?;
    let mut points: Vec<CurvePoint> = Vec::new();
    for dir in &dirs {
        let m = complete_matrix(dir)?;
        if !points.is_empty() && points.len() != m.num_tasks() {
            bail!("seed runs in {} disagree on the number of tasks", run_dir.display());
        }
        for i in 0..m.num_tasks() {
            let (seen, all) = row_curve(&m, i)?;
            match points.get_mut(i) {
                Some(p) => {
                    p.seen += seen;
                    p.all += all;
                }
                None => points.push(CurvePoint { after_task: i, seen, all }),
            }
        }
    }
    let n = dirs.len() as f64;
    for p in &mut points {
        p.seen /= n;
        p.all /= n;
    }
    Ok(points)
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("after_task,avg_success_seen,avg_success_all\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.after_task, p.seen, p.all));
    }
    out
}

/// Writes `curve.csv` and `curve.svg` into `run_dir`.
pub fn curves(run_dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let points = curve(run_dir)?;
    let csv = run_dir.join("curve.csv");
    let svg = run_dir.join("curve.svg");
    write_atomic(&csv, &curve_csv(&points))?;
    write_atomic(&svg, &plot::curve_svg(&points))?;
    Ok(vec![csv, svg])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub task: usize,
    pub n_real: usize,
    pub n_generated: usize,
    pub bandwidth: f64,
    pub mmd2: f64,
}

/// Merges the real and generated exports of `task` for each seed into
/// `replay_task_<k>.csv` and writes the per-step MMD² to `coverage.json`.
pub fn export_replay(run_dir: &Path, task: usize) -> anyhow::Result<Vec<Coverage>> {
    let mut out = Vec::new();
    for dir in seed_dirs(run_dir)? {
        let cfg = find_config(&dir)?;
        let load = |source: &str| -> anyhow::Result<(String, Vec<_>)> {
            let path = dir.join("skilled").join(format!("{task}_{source}.csv"));
            if !path.exists() {
                bail!("missing export {} (method `{}` may not retain trajectories)", path.display(), cfg.method);
            }
            let text = read(&path)?;
            let trajs = trajectories_from_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
            Ok((text, trajs))
        };
        let (real_text, real) = load("real")?;
        let (gen_text, generated) = load("generated")?;
        let mut merged = real_text;
        merged.extend(gen_text.lines().skip(1).flat_map(|l| [l, "\n"]));
        write_atomic(&dir.join(format!("replay_task_{task}.csv")), &merged)?;

        let norm = Normalizer::new(cfg.suite.vmax);
        let (a, b) = (step_rows(&real, &norm), step_rows(&generated, &norm));
        let bandwidth = median_bandwidth(&a, &b);
        let cov = Coverage {
            task,
            n_real: real.len(),
            n_generated: generated.len(),
            bandwidth,
            mmd2: mmd(&a, &b, Some(bandwidth))?,
        };
        write_atomic(&dir.join("coverage.json"), &to_json(&cov))?;
        out.push(cov);
    }
    Ok(out)
}

/// Recomputes every seed's `metrics.json` from its success matrix and
/// rewrites the aggregate summary.
pub fn metrics(run_dir: &Path) -> anyhow::Result<Summary> {
    let dirs = seed_dirs(run_dir)?;
    let mut reports = Vec::new();
    let mut seeds = Vec::new();
    let mut method = String::new();
    for dir in &dirs {
        let cfg = find_config(dir)?;
        let m = complete_matrix(dir)?;
        let ref_path = dir.join(REFERENCE_FILE);
        let refs: Option<Vec<f64>> = if ref_path.exists() {
            Some(serde_json::from_str(&read(&ref_path)?).with_context(|| format!("parsing {}", ref_path.display()))?)
        } else {
            None
        };
        let report = MetricsReport::compute(&cfg.method, &m, refs.as_deref())?;
        write_atomic(&dir.join("metrics.json"), &to_json(&report))?;
        let seed = dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("seed_"))
            .and_then(|s| s.parse().ok())
            .unwrap_or(0);
        seeds.push(seed);
        method = cfg.method;
        reports.push(report);
    }
    let summary = Summary::from_reports(&method, &seeds, &reports)?;
    write_atomic(&run_dir.join("summary.json"), &to_json(&summary))?;
    Ok(summary)
}

/// Exit code for a failed command: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<ConfigError>()) {
        2
    } else {
        1
    }
}
