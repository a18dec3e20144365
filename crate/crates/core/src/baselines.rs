//! Comparison learners: plain sequential fine-tuning and elastic weight
//! consolidation. The perfect-replay oracle lives with the DISTR agent since
//! it shares that pipeline.

use serde::{Deserialize, Serialize};

use crate::agent::bc_loss_and_grad;
use crate::autodiff::{Matrix, NetGrads, NetParams, Parameters};
use crate::error::{shape_err, Error, Result};
use crate::method::{initial_policy, sac_seed, stage, ContinualMethod, MethodConfig, TaskContext, TaskReport};
use crate::sac::{train_immediate, ActorRegularizer, GaussianPolicy, SacConfig};
use crate::seed;
use crate::tasksuite::{rollout, ActionMode, Observation, SuiteConfig, TaskSpec, ACTION_DIM};

pub struct FinetuneLearner {
    policy: GaussianPolicy,
    sac: SacConfig,
}

impl FinetuneLearner {
    pub fn new(cfg: &MethodConfig, suite: &SuiteConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            policy: initial_policy(cfg, suite, seed)?,
            sac: cfg.sac.clone(),
        })
    }
}

impl ContinualMethod for FinetuneLearner {
    fn name(&self) -> &'static str {
        "finetune"
    }

    fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    fn learn_task(&mut self, k: usize, ctx: &mut TaskContext<'_>) -> Result<TaskReport> {
        let (task, seed, gamma) = (&ctx.tasks[k], sac_seed(ctx.seed, k), ctx.gamma);
        let (policy, sac) = (&self.policy, &self.sac);
        let (policy, sac_log) = stage(ctx.log, k, "train_sac", || train_immediate(task, policy, sac, gamma, seed, None))?;
        self.policy = policy;
        Ok(TaskReport { sac_log, record: None })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EwcConfig {
    pub lambda: f64,
    pub fisher_samples: usize,
}

impl Default for EwcConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            fisher_samples: 1000,
        }
    }
}

impl EwcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || self.fisher_samples == 0 {
            return Err(Error::Config("ewc: lambda >= 0 and fisher_samples >= 1 required".into()));
        }
        Ok(())
    }
}

/// Parameters after a finished task with their diagonal Fisher weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EwcAnchor {
    pub theta: NetParams,
    pub fisher: NetGrads,
}

/// Mean of elementwise squared gradients.
pub fn fisher_from_grads(grads: &[NetGrads]) -> Result<NetGrads> {
    let first = grads.first().ok_or(Error::Empty("fisher gradients"))?;
    let mut out = first.clone();
    out.scale(0.0);
    for g in grads {
        let mut sq = g.clone();
        for b in sq.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= *x);
        }
        out.add_assign(&sq)?;
    }
    out.scale(1.0 / grads.len() as f64);
    Ok(out)
}

/// Diagonal Fisher of `log π(a|s)` over on-policy states and sampled actions.
pub fn fisher_estimate(policy: &GaussianPolicy, task: &TaskSpec, n_samples: usize, seed: u64) -> Result<NetGrads> {
    if n_samples == 0 {
        return Err(Error::Empty("fisher samples"));
    }
    let mut states = Vec::with_capacity(n_samples);
    let mut episode = 0u64;
    while states.len() < n_samples {
        let tr = rollout(task, policy, seed::derive(seed, "fisher_rollout", &[episode]), ActionMode::Stochastic)?;
        states.extend(tr.states[..tr.true_length.max(1)].iter().copied());
        episode += 1;
    }
    states.truncate(n_samples);
    let mut rng = seed::rng(seed, "fisher_actions", &[]);
    let mut grads = Vec::with_capacity(n_samples);
    for s in states {
        let obs = Observation::new(s, task.task_id, task.num_tasks).to_vec();
        let (a, _) = policy.sample_action(&obs, ActionMode::Stochastic, &mut rng)?;
        let x = Matrix::from_vec(1, obs.len(), obs)?;
        let act = Matrix::from_vec(1, ACTION_DIM, a.to_vec())?;
        // the NLL gradient is −∇log π; the sign vanishes when squared
        grads.push(bc_loss_and_grad(policy, &x, &act)?.1);
    }
    fisher_from_grads(&grads)
}

fn check_anchor(params: &NetParams, a: &EwcAnchor) -> Result<()> {
    let (p, t, f) = (params.blocks(), a.theta.blocks(), a.fisher.blocks());
    if p.len() != t.len() || p.len() != f.len() || p.iter().zip(&t).zip(&f).any(|((x, y), z)| x.len() != y.len() || x.len() != z.len()) {
        return shape_err("ewc anchor", "anchor shaped differently from parameters");
    }
    Ok(())
}

/// `(λ/2)·Σ_anchors Σ F·(θ − θ*)²`.
pub fn ewc_penalty(params: &NetParams, anchors: &[EwcAnchor], lambda: f64) -> Result<f64> {
    let mut total = 0.0;
    for a in anchors {
        check_anchor(params, a)?;
        for ((p, t), f) in params.blocks().into_iter().zip(a.theta.blocks()).zip(a.fisher.blocks()) {
            for i in 0..p.len() {
                let d = p[i] - t[i];
                total += f[i] * d * d;
            }
        }
    }
    Ok(0.5 * lambda * total)
}

/// Gradient of [`ewc_penalty`]: `λ·Σ F·(θ − θ*)`.
pub fn ewc_penalty_grad(params: &NetParams, anchors: &[EwcAnchor], lambda: f64) -> Result<NetGrads> {
    let mut g = NetGrads::zeros_like(params);
    for a in anchors {
        check_anchor(params, a)?;
        let blocks = params.blocks().into_iter().zip(a.theta.blocks()).zip(a.fisher.blocks());
        for (((p, t), f), out) in blocks.zip(g.blocks_mut()) {
            for i in 0..p.len() {
                out[i] += lambda * f[i] * (p[i] - t[i]);
            }
        }
    }
    Ok(g)
}

pub struct EwcRegularizer<'a> {
    pub anchors: &'a [EwcAnchor],
    pub lambda: f64,
}

impl ActorRegularizer for EwcRegularizer<'_> {
    fn loss_and_grad(&mut self, actor: &GaussianPolicy) -> Result<(f64, NetGrads)> {
        Ok((
            ewc_penalty(&actor.trunk, self.anchors, self.lambda)?,
            ewc_penalty_grad(&actor.trunk, self.anchors, self.lambda)?,
        ))
    }
}

/// SAC with an EWC penalty on the actor. Critics are fresh per task and
/// unconstrained.
pub struct EwcLearner {
    policy: GaussianPolicy,
    sac: SacConfig,
    ewc: EwcConfig,
    pub anchors: Vec<EwcAnchor>,
}

impl EwcLearner {
    pub fn new(cfg: &MethodConfig, suite: &SuiteConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            policy: initial_policy(cfg, suite, seed)?,
            sac: cfg.sac.clone(),
            ewc: cfg.ewc.clone(),
            anchors: Vec::new(),
        })
    }
}

impl ContinualMethod for EwcLearner {
    fn name(&self) -> &'static str {
        "ewc"
    }

    fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    fn learn_task(&mut self, k: usize, ctx: &mut TaskContext<'_>) -> Result<TaskReport> {
        let (task, seed, gamma) = (&ctx.tasks[k], sac_seed(ctx.seed, k), ctx.gamma);
        let mut reg = EwcRegularizer {
            anchors: &self.anchors,
            lambda: self.ewc.lambda,
        };
        let use_reg = !self.anchors.is_empty();
        let (policy, sac) = (&self.policy, &self.sac);
        let (policy, sac_log) = stage(ctx.log, k, "train_sac", || {
            train_immediate(task, policy, sac, gamma, seed, use_reg.then_some(&mut reg as &mut dyn ActorRegularizer))
        })?;
        self.policy = policy;
        let n = self.ewc.fisher_samples;
        let fisher_seed = seed::derive(ctx.seed, "fisher", &[k as u64]);
        let fisher = stage(ctx.log, k, "fisher", || fisher_estimate(&self.policy, task, n, fisher_seed))?;
        self.anchors.push(EwcAnchor {
            theta: self.policy.trunk.clone(),
            fisher,
        });
        Ok(TaskReport { sac_log, record: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;
    use crate::tasksuite::make_task;

    fn one_param(theta: f64) -> NetParams {
        NetParams::from_parts(Activation::Identity, vec![Matrix::from_rows(&[vec![theta]]).unwrap()], vec![vec![0.0]]).unwrap()
    }

    #[test]
    fn penalty_examples() {
        let anchor = EwcAnchor {
            theta: one_param(0.0),
            fisher: NetGrads {
                weights: vec![Matrix::scalar(1.0)],
                biases: vec![Matrix::row_vector(&[0.0])],
            },
        };
        assert_eq!(ewc_penalty(&one_param(2.0), &[anchor.clone()], 1.0).unwrap(), 2.0);
        assert_eq!(ewc_penalty(&one_param(0.0), &[anchor.clone()], 1.0).unwrap(), 0.0);
        assert_eq!(ewc_penalty(&one_param(5.0), &[anchor.clone()], 0.0).unwrap(), 0.0);
        assert_eq!(ewc_penalty_grad(&one_param(0.0), &[anchor.clone()], 7.0).unwrap().max_abs(), 0.0);
        assert_eq!(ewc_penalty_grad(&one_param(2.0), &[anchor.clone()], 1.0).unwrap().weights[0].data(), &[2.0]);
        let wide = NetParams::init(&[2, 1], Activation::Identity, 0).unwrap();
        assert!(ewc_penalty(&wide, &[anchor], 1.0).is_err());
    }

    #[test]
    fn fisher_of_single_gradient_squares_it() {
        let g = NetGrads {
            weights: vec![Matrix::scalar(2.0)],
            biases: vec![Matrix::row_vector(&[-3.0])],
        };
        let f = fisher_from_grads(&[g]).unwrap();
        assert_eq!(f.weights[0].data(), &[4.0]);
        assert_eq!(f.biases[0].data(), &[9.0]);
    }

    #[test]
    fn fisher_of_constant_head_is_zero_and_nonnegative() {
        let suite = SuiteConfig::default();
        let task = make_task(0, &suite).unwrap();
        let mut p = GaussianPolicy::new(suite.obs_dim(), &[8], 0).unwrap();
        let f = fisher_estimate(&p, &task, 50, 1).unwrap();
        assert!(f.blocks().iter().all(|b| b.iter().all(|&x| x >= 0.0)));
        assert!(f.max_abs() > 0.0);
        p.trunk.zero_all();
        // zero weights: only the output bias receives gradient
        let f = fisher_estimate(&p, &task, 50, 1).unwrap();
        let n = f.weights.len();
        for l in 0..n {
            assert_eq!(f.weights[l].max_abs(), 0.0);
        }
        for l in 0..n - 1 {
            assert_eq!(f.biases[l].max_abs(), 0.0);
        }
    }
}
