//! Soft actor-critic with a tanh-squashed Gaussian actor, twin critics and
//! automatic entropy tuning.

use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, AdamState, Matrix, NetGrads, NetParams, NetVars, Tape, Var};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::tasksuite::{self, Action, ActionMode, Observation, Policy, TaskSpec, Trajectory, ACTION_DIM};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside the tanh Jacobian log term.
pub const SQUASH_EPS: f64 = 1e-6;
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    /// Maps an observation to `[mean | log_std]`.
    pub trunk: NetParams,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

/// Tape handles for one batched policy evaluation.
pub struct PolicyVars {
    pub net: NetVars,
    pub mean: Var,
    pub log_std: Var,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * ACTION_DIM);
        Ok(Self {
            trunk: NetParams::init(&sizes, Activation::Relu, seed)?,
            log_std_min: LOG_STD_MIN,
            log_std_max: LOG_STD_MAX,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    /// Mean and clamped log-std for a batch of observations.
    pub fn distribution(&self, obs: &Matrix) -> Result<(Matrix, Matrix)> {
        let out = self.trunk.forward(obs)?;
        let mean = out.columns(0, ACTION_DIM)?;
        let log_std = out
            .columns(ACTION_DIM, 2 * ACTION_DIM)?
            .map(|v| v.clamp(self.log_std_min, self.log_std_max));
        Ok((mean, log_std))
    }

    pub fn on_tape(&self, tape: &mut Tape, obs: Var) -> Result<PolicyVars> {
        let net = self.trunk.forward_on(tape, obs)?;
        let mean = tape.columns(net.output, 0, ACTION_DIM)?;
        let raw = tape.columns(net.output, ACTION_DIM, 2 * ACTION_DIM)?;
        let log_std = tape.clamp(raw, self.log_std_min, self.log_std_max);
        Ok(PolicyVars { net, mean, log_std })
    }

    /// Action and log-probability for a single observation vector.
    pub fn sample_action(&self, obs: &[f64], mode: ActionMode, rng: &mut Rng) -> Result<(Action, f64)> {
        let x = Matrix::from_vec(1, obs.len(), obs.to_vec())?;
        let (mean, log_std) = self.distribution(&x)?;
        let mut action = [0.0; ACTION_DIM];
        let mut log_prob = 0.0;
        for i in 0..ACTION_DIM {
            let (mu, ls) = (mean.get(0, i), log_std.get(0, i));
            let xi = match mode {
                ActionMode::Stochastic => seed::normal(rng),
                _ => 0.0,
            };
            let pre = match mode {
                ActionMode::Perturbed(sigma) => mu + sigma * seed::normal(rng),
                _ => mu + ls.exp() * xi,
            };
            let a = pre.tanh();
            action[i] = a;
            log_prob += -0.5 * xi * xi - ls - HALF_LN_2PI - (1.0 - a * a + SQUASH_EPS).ln();
        }
        Ok((action, log_prob))
    }
}

impl Policy for GaussianPolicy {
    fn act(&self, obs: &Observation, mode: ActionMode, rng: &mut Rng) -> Result<Action> {
        Ok(self.sample_action(&obs.to_vec(), mode, rng)?.0)
    }
}

/// Reparameterized tanh-Gaussian sample on the tape. Returns `(action, log_prob)`
/// with `log_prob` shaped `n×1`.
pub fn reparameterized_sample(tape: &mut Tape, pv: &PolicyVars, noise: &Matrix) -> Result<(Var, Var)> {
    let std = tape.exp(pv.log_std);
    let xi = tape.leaf(noise.clone());
    let spread = tape.mul(std, xi)?;
    let u = tape.add(pv.mean, spread)?;
    let a = tape.tanh(u);
    let a2 = tape.square(a);
    let neg = tape.scale(a2, -1.0);
    let inner = tape.shift(neg, 1.0 + SQUASH_EPS);
    let jac = tape.log(inner);
    let base = tape.leaf(noise.map(|x| -0.5 * x * x - HALF_LN_2PI));
    let gauss = tape.sub(base, pv.log_std)?;
    let per_dim = tape.sub(gauss, jac)?;
    Ok((a, tape.row_sum(per_dim)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub budget_steps: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: usize,
    pub tau: f64,
    pub init_alpha: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            budget_steps: 60_000,
            hidden: vec![128, 128],
            lr: 3e-4,
            batch_size: 256,
            buffer_capacity: 100_000,
            warmup_steps: 1000,
            tau: 0.005,
            init_alpha: 0.2,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("sac.hidden must list positive widths".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config("sac.batch_size and sac.buffer_capacity must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.init_alpha > 0.0 && self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("sac.lr, sac.init_alpha must be positive and sac.tau in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

/// Column-stacked minibatch.
pub struct Batch {
    pub obs: Matrix,
    pub actions: Matrix,
    pub rewards: Matrix,
    pub next_obs: Matrix,
    pub dones: Matrix,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Batch> {
        if self.items.is_empty() {
            return Err(Error::Empty("replay buffer"));
        }
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.items.len())).collect();
        Ok(self.gather(&idx))
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let od = self.items[0].obs.len();
        let mut obs = Vec::with_capacity(idx.len() * od);
        let mut next = Vec::with_capacity(idx.len() * od);
        let mut act = Vec::with_capacity(idx.len() * ACTION_DIM);
        let mut rew = Vec::with_capacity(idx.len());
        let mut done = Vec::with_capacity(idx.len());
        for &i in idx {
            let t = &self.items[i];
            obs.extend_from_slice(&t.obs);
            next.extend_from_slice(&t.next_obs);
            act.extend_from_slice(&t.action);
            rew.push(t.reward);
            done.push(if t.done { 1.0 } else { 0.0 });
        }
        let n = idx.len();
        Batch {
            obs: Matrix::from_vec(n, od, obs).expect("obs"),
            actions: Matrix::from_vec(n, ACTION_DIM, act).expect("actions"),
            rewards: Matrix::from_vec(n, 1, rew).expect("rewards"),
            next_obs: Matrix::from_vec(n, od, next).expect("next obs"),
            dones: Matrix::from_vec(n, 1, done).expect("dones"),
        }
    }
}

/// Extra actor objective added at every actor update (EWC penalty,
/// behavior-cloning terms). Implementors keep their own randomness so that
/// adding a regularizer never shifts the SAC random stream.
pub trait ActorRegularizer {
    fn loss_and_grad(&mut self, actor: &GaussianPolicy) -> Result<(f64, NetGrads)>;
}

#[derive(Debug, Clone)]
pub struct SacState {
    pub policy: GaussianPolicy,
    pub critics: [NetParams; 2],
    pub targets: [NetParams; 2],
    pub log_alpha: Vec<f64>,
    pub target_entropy: f64,
    pub gamma: f64,
    pub tau: f64,
    pub buffer: ReplayBuffer,
    actor_opt: AdamState,
    critic_opts: [AdamState; 2],
    alpha_opt: AdamState,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SacLosses {
    pub critic: f64,
    pub actor: f64,
    pub alpha: f64,
    pub regularizer: f64,
    pub mean_log_prob: f64,
}

impl SacState {
    /// Fresh critics around an existing policy.
    pub fn new(policy: GaussianPolicy, cfg: &SacConfig, gamma: f64, seed: u64) -> Result<Self> {
        let mut sizes = vec![policy.obs_dim() + ACTION_DIM];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(1);
        let c1 = NetParams::init(&sizes, Activation::Relu, seed::derive(seed, "critic", &[0]))?;
        let c2 = NetParams::init(&sizes, Activation::Relu, seed::derive(seed, "critic", &[1]))?;
        let log_alpha = vec![cfg.init_alpha.ln()];
        Ok(Self {
            actor_opt: AdamState::new(&policy.trunk, cfg.lr),
            critic_opts: [AdamState::new(&c1, cfg.lr), AdamState::new(&c2, cfg.lr)],
            alpha_opt: AdamState::new(&log_alpha, cfg.lr),
            targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
            policy,
            log_alpha,
            target_entropy: -(ACTION_DIM as f64),
            gamma,
            tau: cfg.tau,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha[0].exp()
    }

    fn q_on_tape(tape: &mut Tape, critic: &NetParams, obs: Var, act: Var) -> Result<NetVars> {
        let sa = tape.concat_cols(obs, act)?;
        critic.forward_on(tape, sa)
    }

    /// Records the twin-critic loss on `tape`. The bootstrap target is
    /// detached, so neither the target critics nor the policy receive gradient.
    pub fn critic_loss_on_tape(&self, tape: &mut Tape, batch: &Batch, rng: &mut Rng) -> Result<CriticTape> {
        let next = tape.leaf(batch.next_obs.clone());
        let pv = self.policy.on_tape(tape, next)?;
        let noise = normal_matrix(batch.next_obs.rows(), ACTION_DIM, rng);
        let (a_next, logp_next) = reparameterized_sample(tape, &pv, &noise)?;
        let t1 = Self::q_on_tape(tape, &self.targets[0], next, a_next)?;
        let t2 = Self::q_on_tape(tape, &self.targets[1], next, a_next)?;
        let qmin = tape.minimum(t1.output, t2.output)?;
        let ent = tape.scale(logp_next, self.alpha());
        let soft = tape.sub(qmin, ent)?;
        let mask = tape.leaf(batch.dones.map(|d| self.gamma * (1.0 - d)));
        let disc = tape.mul(mask, soft)?;
        let r = tape.leaf(batch.rewards.clone());
        let y_live = tape.add(r, disc)?;
        let y = tape.detach(y_live);

        let obs = tape.leaf(batch.obs.clone());
        let act = tape.leaf(batch.actions.clone());
        let q1 = Self::q_on_tape(tape, &self.critics[0], obs, act)?;
        let q2 = Self::q_on_tape(tape, &self.critics[1], obs, act)?;
        let e1 = tape.sub(q1.output, y)?;
        let e2 = tape.sub(q2.output, y)?;
        let s1 = tape.square(e1);
        let s2 = tape.square(e2);
        let l1 = tape.mean(s1);
        let l2 = tape.mean(s2);
        let loss = tape.add(l1, l2)?;
        Ok(CriticTape {
            loss,
            target: y,
            q: [q1, q2],
            target_q: [t1, t2],
            policy: pv,
        })
    }

    /// One soft actor-critic update from `batch`.
    pub fn update<'a, 'b>(
        &mut self,
        batch: &Batch,
        rng: &mut Rng,
        reg: Option<&'a mut (dyn ActorRegularizer + 'b)>,
    ) -> Result<SacLosses> {
        let mut losses = SacLosses::default();

        let mut tape = Tape::new();
        let ct = self.critic_loss_on_tape(&mut tape, batch, rng)?;
        let g = tape.backward(ct.loss)?;
        losses.critic = tape.scalar_value(ct.loss);
        let g1 = ct.q[0].grads(&g);
        let g2 = ct.q[1].grads(&g);
        let [o1, o2] = &mut self.critic_opts;
        let [c1, c2] = &mut self.critics;
        o1.step(c1, &g1)?;
        o2.step(c2, &g2)?;

        let alpha = self.alpha();
        let mut tape = Tape::new();
        let obs = tape.leaf(batch.obs.clone());
        let pv = self.policy.on_tape(&mut tape, obs)?;
        let noise = normal_matrix(batch.obs.rows(), ACTION_DIM, rng);
        let (a, logp) = reparameterized_sample(&mut tape, &pv, &noise)?;
        let q1 = Self::q_on_tape(&mut tape, &self.critics[0], obs, a)?;
        let q2 = Self::q_on_tape(&mut tape, &self.critics[1], obs, a)?;
        let qmin = tape.minimum(q1.output, q2.output)?;
        let ent = tape.scale(logp, alpha);
        let diff = tape.sub(ent, qmin)?;
        let actor_loss = tape.mean(diff);
        let g = tape.backward(actor_loss)?;
        let mut actor_grads = pv.net.grads(&g);
        losses.actor = tape.scalar_value(actor_loss);
        if let Some(reg) = reg {
            let (l, rg) = reg.loss_and_grad(&self.policy)?;
            actor_grads.add_assign(&rg)?;
            losses.regularizer = l;
        }
        self.actor_opt.step(&mut self.policy.trunk, &actor_grads)?;

        let mean_logp = tape.value(logp).mean();
        losses.mean_log_prob = mean_logp;
        // d/d(log α) of −log α·(log π + H̄)
        let alpha_grad = vec![-(mean_logp + self.target_entropy)];
        losses.alpha = -self.log_alpha[0] * (mean_logp + self.target_entropy);
        self.alpha_opt.step(&mut self.log_alpha, &alpha_grad)?;

        let tau = self.tau;
        for i in 0..2 {
            self.targets[i].polyak_from(&self.critics[i], tau)?;
        }
        Ok(losses)
    }
}

/// Handles into a recorded critic loss.
pub struct CriticTape {
    pub loss: Var,
    pub target: Var,
    pub q: [NetVars; 2],
    pub target_q: [NetVars; 2],
    pub policy: PolicyVars,
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| seed::normal(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("noise shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Environment steps taken when the episode ended.
    pub steps: usize,
    pub episode_return: f64,
    pub success: bool,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub episodes: Vec<EpisodeRecord>,
    pub updates: usize,
}

impl EpisodeLog {
    /// `episode,steps,return,success` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,steps,return,success\n");
        for e in &self.episodes {
            out.push_str(&format!(
                "{},{},{:.16e},{}\n",
                e.episode,
                e.steps,
                e.episode_return,
                u8::from(e.success)
            ));
        }
        out
    }
}

/// Trains `init_policy` on `task` with fresh critics. Warmup steps use
/// uniform random actions; afterwards one update follows every environment step.
pub fn train_immediate(
    task: &TaskSpec,
    init_policy: &GaussianPolicy,
    cfg: &SacConfig,
    gamma: f64,
    seed: u64,
    mut reg: Option<&mut (dyn ActorRegularizer + '_)>,
) -> Result<(GaussianPolicy, EpisodeLog)> {
    let mut state = SacState::new(init_policy.clone(), cfg, gamma, seed::derive(seed, "critics", &[]))?;
    let mut rng = seed::rng(seed, "sac_train", &[]);
    let mut log = EpisodeLog::default();
    let h = task.horizon;

    let mut episode = 0usize;
    let mut s = tasksuite::reset(task, tasksuite::episode_seed(seed, episode));
    let (mut states, mut actions, mut rewards) = (Vec::with_capacity(h), Vec::with_capacity(h), Vec::with_capacity(h));
    for step in 0..cfg.budget_steps {
        let obs = Observation::new(s, task.task_id, task.num_tasks).to_vec();
        let a: Action = if step < cfg.warmup_steps {
            [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
        } else {
            state.policy.sample_action(&obs, ActionMode::Stochastic, &mut rng)?.0
        };
        let out = tasksuite::step(task, &s, &a)?;
        let next_obs = Observation::new(out.next_state, task.task_id, task.num_tasks).to_vec();
        state.buffer.push(Transition {
            obs,
            action: a,
            reward: out.reward,
            next_obs,
            done: out.done,
        });
        states.push(s);
        actions.push(a);
        rewards.push(out.reward);
        s = out.next_state;

        if out.done || states.len() == h {
            let tr = Trajectory::from_prefix(
                task.task_id,
                h,
                std::mem::take(&mut states),
                std::mem::take(&mut actions),
                std::mem::take(&mut rewards),
                s,
                out.success,
            );
            log.episodes.push(EpisodeRecord {
                episode,
                steps: step + 1,
                episode_return: tr.episode_return(),
                success: tr.success,
                trajectory: tr,
            });
            episode += 1;
            s = tasksuite::reset(task, tasksuite::episode_seed(seed, episode));
        }

        if step + 1 > cfg.warmup_steps {
            let batch = state.buffer.sample(cfg.batch_size, &mut rng)?;
            state.update(&batch, &mut rng, reg.as_deref_mut())?;
            log.updates += 1;
        }
    }
    Ok((state.policy, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasksuite::{make_task, SuiteConfig};

    fn zero_policy(obs_dim: usize) -> GaussianPolicy {
        let mut p = GaussianPolicy::new(obs_dim, &[8], 1).unwrap();
        p.trunk.zero_all();
        p
    }

    #[test]
    fn deterministic_zero_mean_gives_zero_action() {
        let p = zero_policy(5);
        let mut rng = seed::rng(0, "t", &[]);
        let (a, _) = p.sample_action(&[0.3; 5], ActionMode::Deterministic, &mut rng).unwrap();
        assert_eq!(a, [0.0, 0.0]);
    }

    #[test]
    fn log_prob_at_origin_matches_hand_value() {
        // zero trunk: μ = 0, log σ = 0; deterministic mode evaluates ξ = 0, u = 0
        let p = zero_policy(5);
        let mut rng = seed::rng(0, "t", &[]);
        let (_, lp) = p.sample_action(&[0.0; 5], ActionMode::Deterministic, &mut rng).unwrap();
        let per_dim = -0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0f64 + 1e-6).ln();
        assert!((per_dim + 0.918939).abs() < 1e-6);
        assert!((lp - 2.0 * per_dim).abs() < 1e-12);
    }

    #[test]
    fn tiny_sigma_collapses_to_tanh_mean() {
        let mut p = zero_policy(3);
        // output bias: mean 0.4, -0.7; log_std at the clamp floor
        let last = p.trunk.biases_mut().len() - 1;
        p.trunk.biases_mut()[last].data_mut().copy_from_slice(&[0.4, -0.7, -20.0, -20.0]);
        let mut rng = seed::rng(3, "t", &[]);
        let (a, _) = p.sample_action(&[1.0, 0.0, 0.0], ActionMode::Stochastic, &mut rng).unwrap();
        assert!((a[0] - 0.4f64.tanh()).abs() < 0.05);
        assert!((a[1] + 0.7f64.tanh()).abs() < 0.05);
    }

    #[test]
    fn tape_log_prob_matches_scalar_path() {
        let p = GaussianPolicy::new(6, &[16], 4).unwrap();
        let obs: Vec<f64> = (0..6).map(|i| 0.1 * i as f64 - 0.2).collect();
        let mut r1 = seed::rng(9, "t", &[]);
        let mut r2 = r1.clone();
        let (a, lp) = p.sample_action(&obs, ActionMode::Stochastic, &mut r1).unwrap();
        let noise = normal_matrix(1, ACTION_DIM, &mut r2);
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::from_vec(1, 6, obs).unwrap());
        let pv = p.on_tape(&mut tape, x).unwrap();
        let (av, lpv) = reparameterized_sample(&mut tape, &pv, &noise).unwrap();
        assert!((tape.value(av).get(0, 0) - a[0]).abs() < 1e-12);
        assert!((tape.value(lpv).get(0, 0) - lp).abs() < 1e-12);
    }

    fn toy_state(tau: f64) -> (SacState, Batch) {
        let cfg = SacConfig {
            hidden: vec![16, 16],
            tau,
            ..SacConfig::default()
        };
        let policy = GaussianPolicy::new(6, &cfg.hidden, 1).unwrap();
        let mut st = SacState::new(policy, &cfg, 0.99, 2).unwrap();
        let mut rng = seed::rng(1, "fill", &[]);
        for i in 0..32 {
            let obs: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let next_obs: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            st.buffer.push(Transition {
                obs,
                action: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                reward: rng.random_range(-1.0..1.0),
                next_obs,
                done: i % 2 == 0,
            });
        }
        let batch = st.buffer.gather(&(0..32).collect::<Vec<_>>());
        (st, batch)
    }

    #[test]
    fn terminal_targets_equal_reward() {
        let (st, batch) = toy_state(0.005);
        let mut tape = Tape::new();
        let mut rng = seed::rng(0, "t", &[]);
        let ct = st.critic_loss_on_tape(&mut tape, &batch, &mut rng).unwrap();
        let y = tape.value(ct.target);
        for i in 0..32 {
            if batch.dones.get(i, 0) == 1.0 {
                assert_eq!(y.get(i, 0), batch.rewards.get(i, 0));
            } else {
                assert_ne!(y.get(i, 0), batch.rewards.get(i, 0));
            }
        }
    }

    #[test]
    fn critic_loss_never_reaches_targets_or_policy() {
        let (st, batch) = toy_state(0.005);
        let mut tape = Tape::new();
        let mut rng = seed::rng(0, "t", &[]);
        let ct = st.critic_loss_on_tape(&mut tape, &batch, &mut rng).unwrap();
        let g = tape.backward(ct.loss).unwrap();
        for t in &ct.target_q {
            assert_eq!(t.grads(&g).max_abs(), 0.0);
        }
        assert_eq!(ct.policy.net.grads(&g).max_abs(), 0.0);
        assert!(ct.q[0].grads(&g).max_abs() > 0.0);
    }

    #[test]
    fn full_polyak_copies_critics() {
        let (mut st, batch) = toy_state(1.0);
        let mut rng = seed::rng(0, "t", &[]);
        st.update(&batch, &mut rng, None).unwrap();
        assert_eq!(st.targets[0], st.critics[0]);
        assert_eq!(st.targets[1], st.critics[1]);
        assert!(st.alpha() > 0.0);
        assert_eq!(st.target_entropy, -2.0);
    }

    #[test]
    fn empty_buffer_is_an_error() {
        let buf = ReplayBuffer::new(4);
        let mut rng = seed::rng(0, "t", &[]);
        assert!(matches!(buf.sample(2, &mut rng), Err(Error::Empty(_))));
    }

    #[test]
    fn buffer_respects_capacity() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..10 {
            buf.push(Transition {
                obs: vec![i as f64],
                action: [0.0; 2],
                reward: 0.0,
                next_obs: vec![0.0],
                done: false,
            });
            assert!(buf.len() <= 3);
        }
        assert_eq!(buf.gather(&[0]).obs.data(), &[7.0]);
    }

    #[test]
    fn budget_below_warmup_makes_no_updates() {
        let suite = SuiteConfig {
            num_tasks: 2,
            ..SuiteConfig::default()
        };
        let task = make_task(0, &suite).unwrap();
        let policy = GaussianPolicy::new(suite.obs_dim(), &[16], 0).unwrap();
        let cfg = SacConfig {
            budget_steps: 200,
            warmup_steps: 500,
            hidden: vec![16],
            ..SacConfig::default()
        };
        let (out, log) = train_immediate(&task, &policy, &cfg, 0.99, 5, None).unwrap();
        assert_eq!(log.updates, 0);
        assert_eq!(out, policy);
        assert!(!log.episodes.is_empty());
        for e in &log.episodes {
            assert!(e.trajectory.satisfies_pad_rule());
        }
    }

    #[test]
    fn training_is_deterministic() {
        let suite = SuiteConfig {
            num_tasks: 2,
            ..SuiteConfig::default()
        };
        let task = make_task(1, &suite).unwrap();
        let policy = GaussianPolicy::new(suite.obs_dim(), &[16], 0).unwrap();
        let cfg = SacConfig {
            budget_steps: 300,
            warmup_steps: 100,
            batch_size: 16,
            hidden: vec![16],
            ..SacConfig::default()
        };
        let a = train_immediate(&task, &policy, &cfg, 0.99, 5, None).unwrap();
        let b = train_immediate(&task, &policy, &cfg, 0.99, 5, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.updates, 200);
        assert_ne!(a.0, policy);
    }
}
