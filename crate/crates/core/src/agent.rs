//! The DISTR learner: an immediate SAC policy per task, a diffusion model
//! that memorizes skilled trajectories, and a general policy distilled by
//! behavior cloning from real and replayed trajectories.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, NetGrads, Tape, Var};
use crate::error::{Error, Result};
use crate::method::{initial_policy, sac_seed, stage, ContinualMethod, MethodConfig, TaskContext, TaskReport};
use crate::priority::{priorities, sample_replay_tasks, vulnerability, specificity_probe, TaskPriorityRecord};
use crate::sac::{train_immediate, ActorRegularizer, EpisodeRecord, GaussianPolicy, HALF_LN_2PI, SQUASH_EPS};
use crate::seed::{self, Rng};
use crate::tasksuite::{trajectories_to_csv, Observation, SuiteConfig, Trajectory, ACTION_DIM};
use crate::trajdiff::TrajectoryDiffusion;

/// Top trajectories kept for one task, tagged with where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SkilledSet {
    pub task_id: usize,
    pub trajectories: Vec<Trajectory>,
    pub source: SkilledSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkilledSource {
    Real,
    Generated,
}

impl SkilledSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Real => "real",
            Self::Generated => "generated",
        }
    }
}

impl SkilledSet {
    pub fn to_csv(&self) -> String {
        trajectories_to_csv(&self.trajectories, Some(self.source.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Decoupled,
    Coupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub n_traj: usize,
    /// Trailing episodes considered by skilled selection.
    pub window: usize,
    /// Episodes per success-rate evaluation.
    pub n_eval: usize,
    pub bc_epochs: usize,
    pub bc_batch_size: usize,
    pub bc_lr: f64,
    /// Weight of the replay BC terms in the coupled scheme.
    pub lambda_bc: f64,
    /// Pad steps kept per trajectory for behavior cloning.
    pub bc_pad_steps: usize,
    /// Generated steps whose actions all stay below this magnitude at the
    /// end of a trajectory are treated as padding.
    pub pad_action_tol: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            n_traj: 20,
            window: 100,
            n_eval: 10,
            bc_epochs: 100,
            bc_batch_size: 256,
            bc_lr: 1e-3,
            lambda_bc: 1.0,
            bc_pad_steps: 1,
            pad_action_tol: 0.05,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 || self.window == 0 || self.n_eval == 0 || self.bc_batch_size == 0 {
            return Err(Error::Config("agent: n_traj, window, n_eval and bc_batch_size must be >= 1".into()));
        }
        if !(self.bc_lr > 0.0) || !(self.lambda_bc >= 0.0) {
            return Err(Error::Config("agent: bc_lr must be positive and lambda_bc non-negative".into()));
        }
        Ok(())
    }
}

/// The `n_traj` highest-return episodes among the last `window`; ties go to
/// the later episode. Results are ordered best first.
pub fn select_skilled(episodes: &[EpisodeRecord], task_id: usize, n_traj: usize, window: usize) -> Result<SkilledSet> {
    if episodes.is_empty() {
        return Err(Error::Empty("episode log"));
    }
    let start = episodes.len().saturating_sub(window);
    let mut idx: Vec<usize> = (start..episodes.len()).collect();
    idx.sort_by(|&a, &b| {
        episodes[b]
            .episode_return
            .total_cmp(&episodes[a].episode_return)
            .then(b.cmp(&a))
    });
    idx.truncate(n_traj);
    Ok(SkilledSet {
        task_id,
        trajectories: idx.iter().map(|&i| episodes[i].trajectory.clone()).collect(),
        source: SkilledSource::Real,
    })
}

/// Length of a generated trajectory: one past the last step with an action
/// component above `tol`.
pub fn inferred_length(tr: &Trajectory, tol: f64) -> usize {
    (0..tr.horizon())
        .rev()
        .find(|&t| tr.actions[t].iter().any(|a| a.abs() > tol))
        .map_or(0, |t| t + 1)
}

/// Per-step `(observation, action)` pairs: every true step of each
/// trajectory plus up to `pad_steps` of its padding.
pub fn bc_pairs(sets: &[&SkilledSet], num_tasks: usize, pad_steps: usize) -> Result<(Matrix, Matrix)> {
    let obs_dim = crate::tasksuite::STATE_DIM + num_tasks;
    let (mut obs, mut act) = (Vec::new(), Vec::new());
    let mut n = 0;
    for set in sets {
        for tr in &set.trajectories {
            for t in 0..(tr.true_length + pad_steps).min(tr.horizon()) {
                obs.extend(Observation::new(tr.states[t], set.task_id, num_tasks).to_vec());
                act.extend_from_slice(&tr.actions[t]);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Empty("behavior cloning data"));
    }
    Ok((Matrix::from_vec(n, obs_dim, obs)?, Matrix::from_vec(n, ACTION_DIM, act)?))
}

const ACTION_CLAMP: f64 = 1.0 - 1e-6;

fn bc_on_tape(tape: &mut Tape, policy: &GaussianPolicy, obs: &Matrix, actions: &Matrix) -> Result<(Var, crate::sac::PolicyVars)> {
    let x = tape.leaf(obs.clone());
    let pv = policy.on_tape(tape, x)?;
    let clamped = actions.map(|a| a.clamp(-ACTION_CLAMP, ACTION_CLAMP));
    let u = tape.leaf(clamped.map(f64::atanh));
    let constant = tape.leaf(clamped.map(|a| HALF_LN_2PI + (1.0 - a * a + SQUASH_EPS).ln()));
    let diff = tape.sub(u, pv.mean)?;
    let neg_log_std = tape.scale(pv.log_std, -1.0);
    let inv_std = tape.exp(neg_log_std);
    let z = tape.mul(diff, inv_std)?;
    let z2 = tape.square(z);
    let half = tape.scale(z2, 0.5);
    let with_std = tape.add(half, pv.log_std)?;
    let per_dim = tape.add(with_std, constant)?;
    let per_row = tape.row_sum(per_dim);
    Ok((tape.mean(per_row), pv))
}

/// Mean negative log-likelihood of `actions` under the tanh-Gaussian policy.
pub fn bc_loss(policy: &GaussianPolicy, obs: &Matrix, actions: &Matrix) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = bc_on_tape(&mut tape, policy, obs, actions)?;
    let v = tape.scalar_value(loss);
    if !v.is_finite() {
        return Err(Error::NonFinite("behavior cloning loss"));
    }
    Ok(v)
}

pub fn bc_loss_and_grad(policy: &GaussianPolicy, obs: &Matrix, actions: &Matrix) -> Result<(f64, NetGrads)> {
    let mut tape = Tape::new();
    let (loss, pv) = bc_on_tape(&mut tape, policy, obs, actions)?;
    let g = tape.backward(loss)?;
    Ok((tape.scalar_value(loss), pv.net.grads(&g)))
}

/// Minimizes the BC loss over minibatches of the union of `datasets`,
/// starting from the current parameters. Returns the mean loss per epoch.
pub fn distill_general(
    policy: &mut GaussianPolicy,
    datasets: &[&SkilledSet],
    cfg: &AgentConfig,
    num_tasks: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if datasets.is_empty() {
        return Err(Error::Empty("distillation datasets"));
    }
    let (obs, act) = bc_pairs(datasets, num_tasks, cfg.bc_pad_steps)?;
    let mut opt = crate::autodiff::AdamState::new(&policy.trunk, cfg.bc_lr);
    let mut rng = seed::rng(seed, "distill", &[]);
    let mut order: Vec<usize> = (0..obs.rows()).collect();
    let mut history = Vec::with_capacity(cfg.bc_epochs);
    for _ in 0..cfg.bc_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.bc_batch_size) {
            let (l, g) = bc_loss_and_grad(policy, &obs.gather_rows(chunk), &act.gather_rows(chunk))?;
            if !l.is_finite() {
                return Err(Error::NonFinite("behavior cloning loss"));
            }
            opt.step(&mut policy.trunk, &g)?;
            total += l;
            count += 1;
        }
        history.push(total / count as f64);
    }
    Ok(history)
}

/// `λ·Σ_i L_BC^(i)` over replayed sets, one minibatch per set per call.
pub struct BcRegularizer {
    sets: Vec<(Matrix, Matrix)>,
    lambda: f64,
    batch_size: usize,
    rng: Rng,
}

impl BcRegularizer {
    pub fn new(sets: &[SkilledSet], num_tasks: usize, cfg: &AgentConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            sets: sets
                .iter()
                .map(|s| bc_pairs(&[s], num_tasks, cfg.bc_pad_steps))
                .collect::<Result<_>>()?,
            lambda: cfg.lambda_bc,
            batch_size: cfg.bc_batch_size,
            rng: seed::rng(seed, "bc_regularizer", &[]),
        })
    }
}

impl ActorRegularizer for BcRegularizer {
    fn loss_and_grad(&mut self, actor: &GaussianPolicy) -> Result<(f64, NetGrads)> {
        let mut total = 0.0;
        let mut grads = NetGrads::zeros_like(&actor.trunk);
        for (obs, act) in &self.sets {
            let idx: Vec<usize> = (0..self.batch_size).map(|_| self.rng.random_range(0..obs.rows())).collect();
            let (l, mut g) = bc_loss_and_grad(actor, &obs.gather_rows(&idx), &act.gather_rows(&idx))?;
            g.scale(self.lambda);
            grads.add_assign(&g)?;
            total += self.lambda * l;
        }
        Ok((total, grads))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Replay {
    /// Past tasks come from the diffusion model, chosen by priority.
    Generative,
    /// Past tasks come from retained real skilled sets, all of them.
    StoredReal,
}

pub struct DistrAgent {
    name: &'static str,
    cfg: MethodConfig,
    num_tasks: usize,
    pub general: GaussianPolicy,
    pub diffusion: TrajectoryDiffusion,
    pub records: Vec<TaskPriorityRecord>,
    scheme: Scheme,
    replay: Replay,
    stored_real: Vec<SkilledSet>,
    /// Mean BC loss per epoch of each distillation.
    pub distill_history: Vec<Vec<f64>>,
}

impl DistrAgent {
    fn build(cfg: &MethodConfig, suite: &SuiteConfig, seed: u64, scheme: Scheme, replay: Replay, name: &'static str) -> Result<Self> {
        cfg.validate()?;
        suite.validate()?;
        Ok(Self {
            name,
            cfg: cfg.clone(),
            num_tasks: suite.num_tasks,
            general: initial_policy(cfg, suite, seed)?,
            diffusion: TrajectoryDiffusion::new(
                &cfg.diffusion,
                suite.horizon,
                suite.num_tasks,
                suite.vmax,
                seed::derive(seed, "denoiser_init", &[]),
            )?,
            records: Vec::new(),
            scheme,
            replay,
            stored_real: Vec::new(),
            distill_history: Vec::new(),
        })
    }

    pub fn generative(cfg: &MethodConfig, suite: &SuiteConfig, seed: u64, coupled: bool) -> Result<Self> {
        if coupled {
            Self::build(cfg, suite, seed, Scheme::Coupled, Replay::Generative, "distr_coupled")
        } else {
            Self::build(cfg, suite, seed, Scheme::Decoupled, Replay::Generative, "distr")
        }
    }

    /// Oracle variant: keeps real skilled sets and replays all of them.
    pub fn perfect_replay(cfg: &MethodConfig, suite: &SuiteConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, suite, seed, Scheme::Decoupled, Replay::StoredReal, "perfect_replay")
    }

    /// Real skilled sets still held in memory. Empty for generative replay
    /// once a task is finished.
    pub fn retained_real_sets(&self) -> &[SkilledSet] {
        &self.stored_real
    }

    fn replay_sets(&self, k: usize, ctx: &mut TaskContext<'_>) -> Result<Vec<SkilledSet>> {
        match self.replay {
            Replay::StoredReal => Ok(self.stored_real.clone()),
            Replay::Generative => {
                if k == 0 {
                    return Ok(Vec::new());
                }
                let probs = priorities(&self.records[..k])?;
                let mut rng = seed::rng(ctx.seed, "replay_pick", &[k as u64]);
                let picked = sample_replay_tasks(&probs, self.cfg.priority.budget, &mut rng);
                let mut sets = Vec::with_capacity(picked.len());
                for i in picked {
                    let set = self.generate_set(i, seed::derive(ctx.seed, "replay_generate", &[k as u64, i as u64]))?;
                    ctx.sink.write(&format!("skilled/{i}_generated.csv"), &set.to_csv())?;
                    sets.push(set);
                }
                Ok(sets)
            }
        }
    }

    /// `n_traj` samples for task `i` with padding inferred from the actions.
    fn generate_set(&self, i: usize, seed: u64) -> Result<SkilledSet> {
        let mut trajectories = self.diffusion.generate(i, self.cfg.agent.n_traj, seed)?;
        for tr in &mut trajectories {
            tr.true_length = inferred_length(tr, self.cfg.agent.pad_action_tol);
        }
        Ok(SkilledSet {
            task_id: i,
            trajectories,
            source: SkilledSource::Generated,
        })
    }

    fn measure_vulnerability(&self, policy: &GaussianPolicy, k: usize, s_s: f64, ctx: &TaskContext<'_>) -> Result<TaskPriorityRecord> {
        let p = &self.cfg.priority;
        let v = vulnerability(
            policy,
            &ctx.tasks[k],
            p.noise_sigma,
            self.cfg.agent.n_eval,
            p.n_repeats,
            seed::derive(ctx.seed, "vulnerability", &[k as u64]),
        )?;
        Ok(TaskPriorityRecord::new(k, v.s_k, v.s_hat, s_s))
    }

    fn fit_denoiser(&mut self, k: usize, real: &SkilledSet, sets: &[SkilledSet], ctx: &mut TaskContext<'_>) -> Result<()> {
        let generated: Vec<SkilledSet> = sets.iter().filter(|s| s.source == SkilledSource::Generated).cloned().collect();
        self.diffusion
            .continual_fit(real, &generated, self.cfg.diffusion.epochs, seed::derive(ctx.seed, "diffusion_fit", &[k as u64]))?;
        ctx.sink.write(&format!("checkpoints/denoiser_after_task_{k}.json"), &self.diffusion.denoiser.to_json()?)
    }

    fn learn_decoupled(&mut self, k: usize, ctx: &mut TaskContext<'_>) -> Result<TaskReport> {
        let task = ctx.tasks[k].clone();
        let n_eval = self.cfg.agent.n_eval;
        let eval_seed = ctx.eval_seed(k);
        let general = &self.general;
        let s_s = stage(ctx.log, k, "specificity_probe", || specificity_probe(general, &task, n_eval, eval_seed))?;
        let init = stage(ctx.log, k, "inherit", || Ok(self.general.clone()))?;
        let (seed, gamma) = (sac_seed(ctx.seed, k), ctx.gamma);
        let sac = &self.cfg.sac;
        let (immediate, sac_log) =
            stage(ctx.log, k, "train_immediate", || train_immediate(&task, &init, sac, gamma, seed, None))?;
        let agent = &self.cfg.agent;
        let real = stage(ctx.log, k, "select_skilled", || {
            select_skilled(&sac_log.episodes, k, agent.n_traj, agent.window)
        })?;
        ctx.sink.write(&format!("skilled/{k}_real.csv"), &real.to_csv())?;
        ctx.log.record(k, "vulnerability");
        let record = self.measure_vulnerability(&immediate, k, s_s, ctx).map_err(|e| tag(e, "vulnerability", k))?;
        self.records.push(record.clone());
        ctx.log.record(k, "generate_replay");
        let sets = self.replay_sets(k, ctx).map_err(|e| tag(e, "generate_replay", k))?;
        if self.replay == Replay::Generative {
            ctx.log.record(k, "fit_denoiser");
            self.fit_denoiser(k, &real, &sets, ctx).map_err(|e| tag(e, "fit_denoiser", k))?;
        }
        let mut data: Vec<&SkilledSet> = vec![&real];
        data.extend(sets.iter());
        let (general, agent) = (&mut self.general, &self.cfg.agent);
        let history = stage(ctx.log, k, "distill", || {
            distill_general(general, &data, agent, self.num_tasks, seed::derive(ctx.seed, "distill", &[k as u64]))
        })?;
        self.distill_history.push(history);
        if self.replay == Replay::StoredReal {
            self.stored_real.push(real);
        }
        Ok(TaskReport {
            sac_log,
            record: Some(record),
        })
    }

    fn learn_coupled(&mut self, k: usize, ctx: &mut TaskContext<'_>) -> Result<TaskReport> {
        let task = ctx.tasks[k].clone();
        let n_eval = self.cfg.agent.n_eval;
        let eval_seed = ctx.eval_seed(k);
        let general = &self.general;
        let s_s = stage(ctx.log, k, "specificity_probe", || specificity_probe(general, &task, n_eval, eval_seed))?;
        ctx.log.record(k, "generate_replay");
        let sets = self.replay_sets(k, ctx).map_err(|e| tag(e, "generate_replay", k))?;
        let (seed, gamma) = (sac_seed(ctx.seed, k), ctx.gamma);
        let mut reg = if sets.is_empty() {
            None
        } else {
            Some(BcRegularizer::new(
                &sets,
                self.num_tasks,
                &self.cfg.agent,
                seed::derive(ctx.seed, "coupled_bc", &[k as u64]),
            )?)
        };
        let (sac, general) = (&self.cfg.sac, &self.general);
        let (policy, sac_log) = stage(ctx.log, k, "train_coupled", || {
            train_immediate(&task, general, sac, gamma, seed, reg.as_mut().map(|r| r as &mut dyn ActorRegularizer))
        })?;
        self.general = policy;
        let agent = &self.cfg.agent;
        let real = stage(ctx.log, k, "select_skilled", || {
            select_skilled(&sac_log.episodes, k, agent.n_traj, agent.window)
        })?;
        ctx.sink.write(&format!("skilled/{k}_real.csv"), &real.to_csv())?;
        ctx.log.record(k, "vulnerability");
        let record = self.measure_vulnerability(&self.general, k, s_s, ctx).map_err(|e| tag(e, "vulnerability", k))?;
        self.records.push(record.clone());
        ctx.log.record(k, "fit_denoiser");
        self.fit_denoiser(k, &real, &sets, ctx).map_err(|e| tag(e, "fit_denoiser", k))?;
        Ok(TaskReport {
            sac_log,
            record: Some(record),
        })
    }
}

fn tag(e: Error, stage: &'static str, task: usize) -> Error {
    match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage,
            task,
            source: Box::new(e),
        },
    }
}

impl ContinualMethod for DistrAgent {
    fn name(&self) -> &'static str {
        self.name
    }

    fn policy(&self) -> &GaussianPolicy {
        &self.general
    }

    fn learn_task(&mut self, k: usize, ctx: &mut TaskContext<'_>) -> Result<TaskReport> {
        if k != self.records.len() {
            return Err(Error::Ordering(format!("expected task {}, got {k}", self.records.len())));
        }
        match self.scheme {
            Scheme::Decoupled => self.learn_decoupled(k, ctx),
            Scheme::Coupled => self.learn_coupled(k, ctx),
        }
    }

    /// Exports final generations for every trained task, for coverage analysis.
    fn finish(&mut self, ctx: &mut TaskContext<'_>) -> Result<()> {
        if self.replay != Replay::Generative {
            return Ok(());
        }
        for i in 0..self.records.len() {
            let set = self.generate_set(i, seed::derive(ctx.seed, "final_generate", &[i as u64]))?;
            ctx.sink.write(&format!("skilled/{i}_generated.csv"), &set.to_csv())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasksuite::{make_task, rollout, ActionMode};

    fn record(episode: usize, ret: f64) -> EpisodeRecord {
        let suite = SuiteConfig {
            horizon: 4,
            ..SuiteConfig::default()
        };
        let task = make_task(0, &suite).unwrap();
        let mut trajectory = rollout(&task, &crate::tasksuite::ZeroPolicy, episode as u64, ActionMode::Deterministic).unwrap();
        trajectory.rewards[0] = episode as f64;
        EpisodeRecord {
            episode,
            steps: 4 * (episode + 1),
            episode_return: ret,
            success: false,
            trajectory,
        }
    }

    fn picked(set: &SkilledSet) -> Vec<usize> {
        set.trajectories.iter().map(|t| t.rewards[0] as usize).collect()
    }

    #[test]
    fn selection_examples() {
        let log: Vec<_> = [1.0, 3.0, 2.0, 3.0].iter().enumerate().map(|(i, &r)| record(i, r)).collect();
        assert_eq!(picked(&select_skilled(&log, 0, 2, 100).unwrap()), vec![3, 1]);
        let log: Vec<_> = (0..150).map(|i| record(i, i as f64)).collect();
        assert_eq!(picked(&select_skilled(&log, 0, 3, 100).unwrap()), vec![149, 148, 147]);
        let log: Vec<_> = (0..5).map(|i| record(i, 0.0)).collect();
        assert_eq!(select_skilled(&log, 0, 20, 100).unwrap().trajectories.len(), 5);
        // the window excludes early high returns
        let mut log: Vec<_> = (0..10).map(|i| record(i, 0.0)).collect();
        log[0].episode_return = 100.0;
        assert!(!picked(&select_skilled(&log, 0, 2, 5).unwrap()).contains(&0));
        assert!(select_skilled(&[], 0, 2, 5).is_err());
    }

    #[test]
    fn bc_loss_at_origin() {
        let mut p = GaussianPolicy::new(5, &[8], 0).unwrap();
        p.trunk.zero_all();
        let obs = Matrix::zeros(3, 5);
        let act = Matrix::zeros(3, 2);
        let per_dim = 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0f64 + 1e-6).ln();
        assert!((per_dim - 0.918939).abs() < 1e-6);
        let l = bc_loss(&p, &obs, &act).unwrap();
        assert!((l - 2.0 * per_dim).abs() < 1e-12);
        assert_eq!(l, bc_loss(&p, &obs, &act).unwrap());
        // actions at the bound are clamped, not infinite
        assert!(bc_loss(&p, &obs, &Matrix::filled(3, 2, 1.0)).unwrap().is_finite());
    }

    #[test]
    fn zero_epochs_leave_policy_unchanged() {
        let suite = SuiteConfig::default();
        let task = make_task(0, &suite).unwrap();
        let tr = rollout(&task, &crate::tasksuite::ScriptedController::for_task(&task), 0, ActionMode::Deterministic).unwrap();
        let set = SkilledSet {
            task_id: 0,
            trajectories: vec![tr],
            source: SkilledSource::Real,
        };
        let mut p = GaussianPolicy::new(suite.obs_dim(), &[8], 0).unwrap();
        let before = p.clone();
        let cfg = AgentConfig {
            bc_epochs: 0,
            ..AgentConfig::default()
        };
        distill_general(&mut p, &[&set], &cfg, suite.num_tasks, 0).unwrap();
        assert_eq!(p, before);
        let cfg = AgentConfig {
            bc_epochs: 5,
            ..AgentConfig::default()
        };
        let h = distill_general(&mut p, &[&set], &cfg, suite.num_tasks, 0).unwrap();
        assert!(h.last().unwrap() < &h[0]);
    }

    #[test]
    fn bc_gradient_matches_finite_difference() {
        let p = GaussianPolicy::new(5, &[6], 3).unwrap();
        let mut rng = seed::rng(1, "t", &[]);
        let obs = crate::sac::normal_matrix(4, 5, &mut rng);
        let act = crate::sac::normal_matrix(4, 2, &mut rng).map(|x| 0.8 * x.tanh());
        let (_, g) = bc_loss_and_grad(&p, &obs, &act).unwrap();
        let h = 1e-5;
        for (l, w) in p.trunk.weights().iter().enumerate() {
            for idx in [0, w.data().len() - 1] {
                let mut plus = p.clone();
                plus.trunk.weights_mut()[l].data_mut()[idx] += h;
                let mut minus = p.clone();
                minus.trunk.weights_mut()[l].data_mut()[idx] -= h;
                let fd = (bc_loss(&plus, &obs, &act).unwrap() - bc_loss(&minus, &obs, &act).unwrap()) / (2.0 * h);
                let an = g.weights[l].data()[idx];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "{fd} vs {an}");
            }
        }
    }
}
