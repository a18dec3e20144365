//! Common interface for continual learners, a name registry, and the
//! task-sequence runner shared by every method.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, DistrAgent};
use crate::baselines::{EwcConfig, EwcLearner, FinetuneLearner};
use crate::error::{Error, Result};
use crate::metrics::SuccessMatrix;
use crate::priority::{records_to_csv, PriorityConfig, TaskPriorityRecord};
use crate::sac::{train_immediate, EpisodeLog, GaussianPolicy, SacConfig};
use crate::seed;
use crate::tasksuite::{success_rate, SuiteConfig, TaskSpec};
use crate::trajdiff::DiffusionConfig;

/// Hyperparameters for every method; each learner reads the sections it needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub sac: SacConfig,
    pub diffusion: DiffusionConfig,
    pub agent: AgentConfig,
    pub priority: PriorityConfig,
    pub ewc: EwcConfig,
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        self.sac.validate()?;
        self.diffusion.validate()?;
        self.agent.validate()?;
        self.priority.validate()?;
        self.ewc.validate()
    }
}

/// Receives run artifacts by path relative to the run directory.
pub trait ArtifactSink {
    fn write(&mut self, path: &str, contents: &str) -> Result<()>;
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl ArtifactSink for NullSink {
    fn write(&mut self, _: &str, _: &str) -> Result<()> {
        Ok(())
    }
}

/// Keeps artifacts in memory, keyed by path.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub files: BTreeMap<String, String>,
}

impl ArtifactSink for MemorySink {
    fn write(&mut self, path: &str, contents: &str) -> Result<()> {
        self.files.insert(path.to_string(), contents.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageEvent {
    pub seq: usize,
    pub task: usize,
    pub stage: &'static str,
}

/// Sequence-numbered record of pipeline stages, used to check ordering.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageLog {
    pub events: Vec<StageEvent>,
}

impl StageLog {
    pub fn record(&mut self, task: usize, stage: &'static str) {
        let seq = self.events.len();
        self.events.push(StageEvent { seq, task, stage });
    }

    /// Sequence number of the first `stage` event for `task`.
    pub fn position(&self, task: usize, stage: &str) -> Option<usize> {
        self.events.iter().find(|e| e.task == task && e.stage == stage).map(|e| e.seq)
    }

    /// Errors unless `first` was recorded for `task` before `second`.
    pub fn check_before(&self, task: usize, first: &str, second: &str) -> Result<()> {
        match (self.position(task, first), self.position(task, second)) {
            (Some(a), Some(b)) if a < b => Ok(()),
            (a, b) => Err(Error::Ordering(format!(
                "task {task}: `{first}` at {a:?} must precede `{second}` at {b:?}"
            ))),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seq,task,stage\n");
        for e in &self.events {
            out.push_str(&format!("{},{},{}\n", e.seq, e.task, e.stage));
        }
        out
    }
}

/// Runs `f` as a named stage: logs it first and tags any error with its name.
pub fn stage<T>(log: &mut StageLog, task: usize, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    log.record(task, name);
    f().map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name,
            task,
            source: Box::new(e),
        },
    })
}

pub struct TaskContext<'a> {
    pub tasks: &'a [TaskSpec],
    pub gamma: f64,
    pub seed: u64,
    pub n_eval: usize,
    pub log: &'a mut StageLog,
    pub sink: &'a mut dyn ArtifactSink,
}

impl TaskContext<'_> {
    /// Start-state seed for evaluating task `j`; shared by every evaluation of
    /// that task so a probe before training equals the previous row's entry.
    pub fn eval_seed(&self, j: usize) -> u64 {
        eval_seed(self.seed, j)
    }
}

pub fn eval_seed(root: u64, task: usize) -> u64 {
    seed::derive(root, "eval", &[task as u64])
}

#[derive(Debug, Clone, Default)]
pub struct TaskReport {
    pub sac_log: EpisodeLog,
    pub record: Option<TaskPriorityRecord>,
}

/// A continual learner that meets tasks one at a time.
pub trait ContinualMethod {
    fn name(&self) -> &'static str;

    /// The policy evaluated for the success matrix.
    fn policy(&self) -> &GaussianPolicy;

    fn learn_task(&mut self, k: usize, ctx: &mut TaskContext<'_>) -> Result<TaskReport>;

    /// Called once after the last task.
    fn finish(&mut self, _ctx: &mut TaskContext<'_>) -> Result<()> {
        Ok(())
    }
}

pub type MethodCtor = fn(&MethodConfig, &SuiteConfig, u64) -> Result<Box<dyn ContinualMethod>>;

fn distr(cfg: &MethodConfig, suite: &SuiteConfig, seed: u64) -> Result<Box<dyn ContinualMethod>> {
    Ok(Box::new(DistrAgent::generative(cfg, suite, seed, false)?))
}

fn distr_coupled(cfg: &MethodConfig, suite: &SuiteConfig, seed: u64) -> Result<Box<dyn ContinualMethod>> {
    Ok(Box::new(DistrAgent::generative(cfg, suite, seed, true)?))
}

fn perfect_replay(cfg: &MethodConfig, suite: &SuiteConfig, seed: u64) -> Result<Box<dyn ContinualMethod>> {
    Ok(Box::new(DistrAgent::perfect_replay(cfg, suite, seed)?))
}

fn finetune(cfg: &MethodConfig, suite: &SuiteConfig, seed: u64) -> Result<Box<dyn ContinualMethod>> {
    Ok(Box::new(FinetuneLearner::new(cfg, suite, seed)?))
}

fn ewc(cfg: &MethodConfig, suite: &SuiteConfig, seed: u64) -> Result<Box<dyn ContinualMethod>> {
    Ok(Box::new(EwcLearner::new(cfg, suite, seed)?))
}

pub const REGISTRY: &[(&str, MethodCtor)] = &[
    ("distr", distr),
    ("distr_coupled", distr_coupled),
    ("finetune", finetune),
    ("ewc", ewc),
    ("perfect_replay", perfect_replay),
];

pub fn method_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|(n, _)| *n).collect()
}

pub fn build_method(name: &str, cfg: &MethodConfig, suite: &SuiteConfig, seed: u64) -> Result<Box<dyn ContinualMethod>> {
    let ctor = REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| c)
        .ok_or_else(|| Error::Config(format!("unknown method `{name}`; known: {}", method_names().join(", "))))?;
    ctor(cfg, suite, seed)
}

/// The general policy every method starts from.
pub fn initial_policy(cfg: &MethodConfig, suite: &SuiteConfig, seed: u64) -> Result<GaussianPolicy> {
    GaussianPolicy::new(suite.obs_dim(), &cfg.sac.hidden, seed::derive(seed, "general_policy", &[]))
}

pub fn sac_seed(root: u64, task: usize) -> u64 {
    seed::derive(root, "sac", &[task as u64])
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub method: String,
    pub matrix: SuccessMatrix,
    pub records: Vec<TaskPriorityRecord>,
    pub log: StageLog,
    pub sac_logs: Vec<EpisodeLog>,
}

fn evaluate_row(policy: &GaussianPolicy, tasks: &[TaskSpec], n_eval: usize, root: u64) -> Result<Vec<Option<f64>>> {
    tasks
        .iter()
        .enumerate()
        .map(|(j, t)| success_rate(t, policy, n_eval, eval_seed(root, j)).map(Some))
        .collect()
}

/// Evaluates the pre-training row, then trains and evaluates every task in
/// order, writing per-task artifacts as they appear.
pub fn run_sequence(
    method: &mut dyn ContinualMethod,
    suite: &SuiteConfig,
    n_eval: usize,
    seed: u64,
    sink: &mut dyn ArtifactSink,
) -> Result<RunOutcome> {
    suite.validate()?;
    let tasks = suite.tasks()?;
    let mut matrix = SuccessMatrix::new(tasks.len());
    let mut log = StageLog::default();
    let mut records = Vec::new();
    let mut sac_logs = Vec::new();

    let pre = stage(&mut log, 0, "evaluate_pre", || evaluate_row(method.policy(), &tasks, n_eval, seed))?;
    matrix.set_pre_row(pre)?;

    for k in 0..tasks.len() {
        let mut ctx = TaskContext {
            tasks: &tasks,
            gamma: suite.gamma,
            seed,
            n_eval,
            log: &mut log,
            sink,
        };
        let report = method.learn_task(k, &mut ctx)?;
        let row = stage(&mut log, k, "evaluate", || evaluate_row(method.policy(), &tasks, n_eval, seed))?;
        matrix.push_row(row)?;
        if let Some(r) = report.record {
            records.push(r);
        }
        sink.write(&format!("checkpoints/policy_after_task_{k}.json"), &method.policy().trunk.to_json()?)?;
        sink.write(&format!("sac_log_task_{k}.csv"), &report.sac_log.to_csv())?;
        sink.write("success_matrix.csv", &matrix.to_csv())?;
        sink.write("priority_records.csv", &records_to_csv(&records))?;
        sac_logs.push(report.sac_log);
    }
    let mut ctx = TaskContext {
        tasks: &tasks,
        gamma: suite.gamma,
        seed,
        n_eval,
        log: &mut log,
        sink,
    };
    method.finish(&mut ctx)?;
    sink.write("stage_log.csv", &log.to_csv())?;
    Ok(RunOutcome {
        method: method.name().to_string(),
        matrix,
        records,
        log,
        sac_logs,
    })
}

/// Single-task success of a fresh SAC learner per task, with the same budget.
pub fn reference_scores(cfg: &MethodConfig, suite: &SuiteConfig, n_eval: usize, seed: u64) -> Result<Vec<f64>> {
    let tasks = suite.tasks()?;
    tasks
        .iter()
        .enumerate()
        .map(|(k, task)| {
            let init = GaussianPolicy::new(
                suite.obs_dim(),
                &cfg.sac.hidden,
                seed::derive(seed, "reference_policy", &[k as u64]),
            )?;
            let (policy, _) = train_immediate(
                task,
                &init,
                &cfg.sac,
                suite.gamma,
                seed::derive(seed, "reference_sac", &[k as u64]),
                None,
            )?;
            success_rate(task, &policy, n_eval, eval_seed(seed, k))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_log_ordering() {
        let mut log = StageLog::default();
        log.record(0, "a");
        log.record(0, "b");
        assert!(log.check_before(0, "a", "b").is_ok());
        assert!(log.check_before(0, "b", "a").is_err());
        assert!(log.check_before(1, "a", "b").is_err());
    }

    #[test]
    fn stage_errors_carry_the_name() {
        let mut log = StageLog::default();
        let err = stage::<()>(&mut log, 2, "distill", || Err(Error::Empty("x"))).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "distill", task: 2, .. }));
        // nested stages keep the innermost name
        let err = stage::<()>(&mut log, 2, "outer", || Err(err)).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "distill", .. }));
    }

    #[test]
    fn registry_names() {
        assert_eq!(method_names(), ["distr", "distr_coupled", "finetune", "ewc", "perfect_replay"]);
        let cfg = MethodConfig::default();
        let suite = SuiteConfig::default();
        assert!(build_method("nope", &cfg, &suite, 0).is_err());
        for name in method_names() {
            assert_eq!(build_method(name, &cfg, &suite, 0).unwrap().name(), name);
        }
    }
}
