//! Replay prioritization from vulnerability and specificity.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::tasksuite::{success_rate, success_rate_paired, ActionMode, Policy, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorityConfig {
    /// Standard deviation of the pre-squash perturbation.
    pub noise_sigma: f64,
    pub n_repeats: usize,
    /// Replay budget in tasks per boundary.
    pub budget: usize,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.3,
            n_repeats: 5,
            budget: 3,
        }
    }
}

impl PriorityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) || self.n_repeats == 0 {
            return Err(Error::Config("priority: noise_sigma >= 0 and n_repeats >= 1 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPriorityRecord {
    pub task_id: usize,
    /// Success after learning.
    pub s_k: f64,
    /// Success under perturbation.
    pub s_hat: f64,
    pub s_v: f64,
    pub s_s: f64,
    pub priority: f64,
}

impl TaskPriorityRecord {
    pub fn new(task_id: usize, s_k: f64, s_hat: f64, s_s: f64) -> Self {
        let s_v = (s_k - s_hat).clamp(0.0, 1.0);
        Self {
            task_id,
            s_k,
            s_hat,
            s_v,
            s_s,
            priority: priority(s_v, s_s),
        }
    }
}

pub fn priority(s_v: f64, s_s: f64) -> f64 {
    (s_v + 1.0 - s_s) / 2.0
}

pub const RECORDS_CSV_HEADER: &str = "task,s_v,s_s,priority";

pub fn records_to_csv(records: &[TaskPriorityRecord]) -> String {
    let mut out = format!("{RECORDS_CSV_HEADER}\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.task_id, r.s_v, r.s_s, r.priority));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vulnerability {
    pub s_k: f64,
    pub s_hat: f64,
    pub s_v: f64,
}

/// Clean success against the mean success over `n_repeats` perturbed runs.
/// Perturbed runs reuse the clean start states, so `noise_sigma = 0` gives
/// `s_v = 0` exactly.
pub fn vulnerability(
    policy: &dyn Policy,
    task: &TaskSpec,
    noise_sigma: f64,
    n_eval: usize,
    n_repeats: usize,
    seed: u64,
) -> Result<Vulnerability> {
    if n_repeats == 0 {
        return Err(Error::Empty("vulnerability repeats"));
    }
    let s_k = success_rate(task, policy, n_eval, seed)?;
    let mut total = 0.0;
    for r in 0..n_repeats {
        let noise = seed::derive(seed, "perturb", &[r as u64]);
        total += success_rate_paired(task, policy, n_eval, seed, noise, ActionMode::Perturbed(noise_sigma))?;
    }
    let s_hat = total / n_repeats as f64;
    Ok(Vulnerability {
        s_k,
        s_hat,
        s_v: (s_k - s_hat).clamp(0.0, 1.0),
    })
}

/// Success of the current policy on a task it has not been trained on yet.
pub fn specificity_probe(policy: &dyn Policy, task: &TaskSpec, n_eval: usize, seed: u64) -> Result<f64> {
    success_rate(task, policy, n_eval, seed)
}

/// Normalized priorities; uniform when every priority is zero.
pub fn priorities(records: &[TaskPriorityRecord]) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::Empty("priority records"));
    }
    let total: f64 = records.iter().map(|r| r.priority).sum();
    if total <= 0.0 {
        return Ok(vec![1.0 / records.len() as f64; records.len()]);
    }
    Ok(records.iter().map(|r| r.priority / total).collect())
}

/// Indices into `probs` chosen by successive proportional draws without
/// replacement. Returns every index when the pool fits in the budget.
pub fn sample_replay_tasks(probs: &[f64], budget: usize, rng: &mut Rng) -> Vec<usize> {
    if probs.len() <= budget {
        return (0..probs.len()).collect();
    }
    let mut weights = probs.to_vec();
    let mut chosen = Vec::with_capacity(budget);
    for _ in 0..budget {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                acc += w;
                if w > 0.0 && u < acc {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave u at the very top; take the last live weight
            pick.or_else(|| weights.iter().rposition(|&w| w > 0.0))
        } else {
            None
        };
        // every remaining weight is zero: fall back to uniform over the rest
        let pick = pick.unwrap_or_else(|| {
            let rest: Vec<usize> = (0..weights.len()).filter(|i| !chosen.contains(i)).collect();
            rest[rng.random_range(0..rest.len())]
        });
        weights[pick] = 0.0;
        chosen.push(pick);
    }
    chosen.sort_unstable();
    chosen
}
