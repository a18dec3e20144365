//! A continual suite of point-mass goal-reaching tasks.
//!
//! All tasks share a 4-dimensional state `(x, y, vx, vy)` and a 2-dimensional
//! acceleration action in `[-1, 1]²`. Task `k` places its goal on the unit
//! circle and may mirror the action (`action_sign = -1`), which makes
//! neighbouring tasks pull a shared policy in opposite directions.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 2;

pub type State = [f64; STATE_DIM];
pub type Action = [f64; ACTION_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub num_tasks: usize,
    pub dt: f64,
    pub accel_gain: f64,
    pub vmax: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub success_radius: f64,
    pub flip_even_tasks: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            num_tasks: 5,
            dt: 0.1,
            accel_gain: 2.0,
            vmax: 1.0,
            gamma: 0.99,
            horizon: 64,
            success_radius: 0.15,
            flip_even_tasks: true,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("suite: {msg}")));
        if self.num_tasks == 0 {
            return bad("num_tasks must be >= 1");
        }
        if !(self.dt > 0.0 && self.accel_gain > 0.0 && self.vmax > 0.0 && self.success_radius > 0.0) {
            return bad("dt, accel_gain, vmax and success_radius must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        Ok(())
    }

    /// Width of an observation vector: state plus task one-hot.
    pub fn obs_dim(&self) -> usize {
        STATE_DIM + self.num_tasks
    }

    pub fn tasks(&self) -> Result<Vec<TaskSpec>> {
        (0..self.num_tasks).map(|k| make_task(k, self)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: usize,
    pub num_tasks: usize,
    pub goal: [f64; 2],
    pub action_sign: f64,
    pub horizon: usize,
    pub success_radius: f64,
    pub dt: f64,
    pub accel_gain: f64,
    pub vmax: f64,
}

pub fn make_task(k: usize, cfg: &SuiteConfig) -> Result<TaskSpec> {
    if k >= cfg.num_tasks {
        return Err(Error::OutOfRange {
            what: "task index",
            index: k,
            limit: cfg.num_tasks,
        });
    }
    let n = cfg.num_tasks as f64;
    let angle = 2.0 * PI * k as f64 / n + PI / n;
    let flipped = cfg.flip_even_tasks && k % 2 == 0;
    Ok(TaskSpec {
        task_id: k,
        num_tasks: cfg.num_tasks,
        goal: [angle.cos(), angle.sin()],
        action_sign: if flipped { -1.0 } else { 1.0 },
        horizon: cfg.horizon,
        success_radius: cfg.success_radius,
        dt: cfg.dt,
        accel_gain: cfg.accel_gain,
        vmax: cfg.vmax,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub state: State,
    pub task_onehot: Vec<f64>,
}

impl Observation {
    pub fn new(state: State, task_id: usize, num_tasks: usize) -> Self {
        let mut task_onehot = vec![0.0; num_tasks];
        task_onehot[task_id] = 1.0;
        Self { state, task_onehot }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(STATE_DIM + self.task_onehot.len());
        v.extend_from_slice(&self.state);
        v.extend_from_slice(&self.task_onehot);
        v
    }

    pub fn write_into(&self, out: &mut [f64]) {
        out[..STATE_DIM].copy_from_slice(&self.state);
        out[STATE_DIM..].copy_from_slice(&self.task_onehot);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
    /// Deterministic action with `N(0, sigma²)` noise on the pre-squash output.
    Perturbed(f64),
}

pub trait Policy {
    /// Returns an action in `[-1, 1]²`.
    fn act(&self, obs: &Observation, mode: ActionMode, rng: &mut Rng) -> Result<Action>;
}

pub fn reset(_task: &TaskSpec, seed: u64) -> State {
    let mut rng = seed::rng(seed, "reset", &[]);
    [
        rng.random_range(-0.05..=0.05),
        rng.random_range(-0.05..=0.05),
        0.0,
        0.0,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: State,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

pub fn step(task: &TaskSpec, state: &State, action: &Action) -> Result<StepOutcome> {
    for &a in action {
        if !(-1.0..=1.0).contains(&a) {
            return Err(Error::ActionOutOfBounds(a));
        }
    }
    let k = task.action_sign * task.accel_gain * task.dt;
    let vx = (state[2] + k * action[0]).clamp(-task.vmax, task.vmax);
    let vy = (state[3] + k * action[1]).clamp(-task.vmax, task.vmax);
    let x = state[0] + task.dt * vx;
    let y = state[1] + task.dt * vy;
    let dist = ((x - task.goal[0]).powi(2) + (y - task.goal[1]).powi(2)).sqrt();
    let success = dist < task.success_radius;
    let reward = -dist * task.dt + if success { 1.0 } else { 0.0 };
    Ok(StepOutcome {
        next_state: [x, y, vx, vy],
        reward,
        done: success,
        success,
    })
}

/// Fixed-horizon episode. Rows at and beyond `true_length` repeat the
/// terminal state with zero action and zero reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task_id: usize,
    pub states: Vec<State>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub true_length: usize,
    pub success: bool,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Builds a padded trajectory from the real prefix and the state reached
    /// after the last real step.
    pub fn from_prefix(
        task_id: usize,
        horizon: usize,
        mut states: Vec<State>,
        mut actions: Vec<Action>,
        mut rewards: Vec<f64>,
        terminal: State,
        success: bool,
    ) -> Self {
        let true_length = states.len();
        debug_assert!(true_length >= 1 && true_length <= horizon);
        states.resize(horizon, terminal);
        actions.resize(horizon, [0.0; ACTION_DIM]);
        rewards.resize(horizon, 0.0);
        Self {
            task_id,
            states,
            actions,
            rewards,
            true_length,
            success,
        }
    }

    /// True when every row past `true_length` follows the pad rule.
    pub fn satisfies_pad_rule(&self) -> bool {
        let l = self.true_length;
        if l == 0 || l > self.horizon() {
            return false;
        }
        if l == self.horizon() {
            return true;
        }
        let terminal = self.states[l];
        (l..self.horizon()).all(|t| {
            self.states[t] == terminal && self.actions[t] == [0.0; ACTION_DIM] && self.rewards[t] == 0.0
        })
    }
}

pub fn rollout(task: &TaskSpec, policy: &dyn Policy, seed: u64, mode: ActionMode) -> Result<Trajectory> {
    rollout_paired(task, policy, seed, seed, mode)
}

/// Rollout whose start state comes from `reset_seed` and whose action noise
/// comes from `noise_seed`, so noisy and clean runs can share start states.
pub fn rollout_paired(task: &TaskSpec, policy: &dyn Policy, reset_seed: u64, noise_seed: u64, mode: ActionMode) -> Result<Trajectory> {
    let mut rng = seed::rng(noise_seed, "rollout_policy", &[]);
    let mut state = reset(task, reset_seed);
    let h = task.horizon;
    let (mut states, mut actions, mut rewards) = (Vec::with_capacity(h), Vec::with_capacity(h), Vec::with_capacity(h));
    let mut success = false;
    for _ in 0..h {
        let obs = Observation::new(state, task.task_id, task.num_tasks);
        let a = policy.act(&obs, mode, &mut rng)?;
        let out = step(task, &state, &a)?;
        states.push(state);
        actions.push(a);
        rewards.push(out.reward);
        state = out.next_state;
        if out.done {
            success = out.success;
            break;
        }
    }
    Ok(Trajectory::from_prefix(task.task_id, h, states, actions, rewards, state, success))
}

pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed::derive(seed, "episode", &[episode as u64])
}

/// Fraction of successful rollouts under `mode` over `n_episodes` derived seeds.
pub fn success_rate_with(task: &TaskSpec, policy: &dyn Policy, n_episodes: usize, seed: u64, mode: ActionMode) -> Result<f64> {
    success_rate_paired(task, policy, n_episodes, seed, seed, mode)
}

/// Like [`success_rate_with`], with start states from `seed` and action noise
/// from `noise_seed`.
pub fn success_rate_paired(
    task: &TaskSpec,
    policy: &dyn Policy,
    n_episodes: usize,
    seed: u64,
    noise_seed: u64,
    mode: ActionMode,
) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::Empty("success_rate episodes"));
    }
    let mut hits = 0usize;
    for e in 0..n_episodes {
        if rollout_paired(task, policy, episode_seed(seed, e), episode_seed(noise_seed, e), mode)?.success {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_episodes as f64)
}

pub fn success_rate(task: &TaskSpec, policy: &dyn Policy, n_episodes: usize, seed: u64) -> Result<f64> {
    success_rate_with(task, policy, n_episodes, seed, ActionMode::Deterministic)
}

/// Proportional-derivative controller steering toward a fixed goal,
/// assuming a given action sign.
#[derive(Debug, Clone)]
pub struct ScriptedController {
    pub goal: [f64; 2],
    pub action_sign: f64,
    pub kp: f64,
    pub kd: f64,
}

impl ScriptedController {
    pub fn for_task(task: &TaskSpec) -> Self {
        Self {
            goal: task.goal,
            action_sign: task.action_sign,
            kp: 4.0,
            kd: 2.0,
        }
    }
}

impl Policy for ScriptedController {
    fn act(&self, obs: &Observation, mode: ActionMode, rng: &mut Rng) -> Result<Action> {
        let s = obs.state;
        let mut a = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            let raw = self.action_sign * (self.kp * (self.goal[i] - s[i]) - self.kd * s[i + 2]);
            let noise = match mode {
                ActionMode::Stochastic => 0.1 * seed::normal(rng),
                ActionMode::Perturbed(sigma) => sigma * seed::normal(rng),
                ActionMode::Deterministic => 0.0,
            };
            a[i] = (raw + noise).clamp(-1.0, 1.0);
        }
        Ok(a)
    }
}

/// Steers toward `waypoint` until its distance to the goal line is covered,
/// then hands over to the goal controller. Mirrored waypoints give a
/// two-mode trajectory set for one task.
#[derive(Debug, Clone)]
pub struct WaypointController {
    pub waypoint: [f64; 2],
    /// Switch once the projection onto the start-to-goal axis passes this.
    pub switch_progress: f64,
    pub to_goal: ScriptedController,
}

impl WaypointController {
    pub fn new(task: &TaskSpec, waypoint: [f64; 2], switch_progress: f64) -> Self {
        Self {
            waypoint,
            switch_progress,
            to_goal: ScriptedController::for_task(task),
        }
    }

    /// Waypoint halfway to the goal, offset sideways by 0.6 to the left
    /// (`side > 0`) or right of the straight path.
    pub fn mirrored(task: &TaskSpec, side: f64) -> Self {
        let g = task.goal;
        let perp = [-g[1], g[0]];
        let off = 0.6 * side.signum();
        Self::new(task, [0.5 * g[0] + off * perp[0], 0.5 * g[1] + off * perp[1]], 0.45)
    }
}

impl Policy for WaypointController {
    fn act(&self, obs: &Observation, mode: ActionMode, rng: &mut Rng) -> Result<Action> {
        let g = self.to_goal.goal;
        let progress = obs.state[0] * g[0] + obs.state[1] * g[1];
        if progress >= self.switch_progress {
            return self.to_goal.act(obs, mode, rng);
        }
        let leg = ScriptedController {
            goal: self.waypoint,
            ..self.to_goal.clone()
        };
        leg.act(obs, mode, rng)
    }
}

/// Always returns the zero action.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&self, _: &Observation, _: ActionMode, _: &mut Rng) -> Result<Action> {
        Ok([0.0; ACTION_DIM])
    }
}

pub const CSV_HEADER: &str = "task_id,traj,step,x,y,vx,vy,ax,ay,reward";

fn push_num(line: &mut String, v: f64) {
    let _ = write!(line, ",{v:.16e}");
}

/// One row per step, all doubles printed with 17 significant digits.
/// `source` appends the generated/real column when given.
pub fn trajectories_to_csv(trajs: &[Trajectory], source: Option<&str>) -> String {
    let mut out = String::from(CSV_HEADER);
    if source.is_some() {
        out.push_str(",source");
    }
    out.push('\n');
    for (i, tr) in trajs.iter().enumerate() {
        for t in 0..tr.horizon() {
            let mut line = format!("{},{},{}", tr.task_id, i, t);
            for v in tr.states[t] {
                push_num(&mut line, v);
            }
            for v in tr.actions[t] {
                push_num(&mut line, v);
            }
            push_num(&mut line, tr.rewards[t]);
            if let Some(s) = source {
                line.push(',');
                line.push_str(s);
            }
            line.push('\n');
            out.push_str(&line);
        }
    }
    out
}

/// Inverse of [`trajectories_to_csv`]. Episode length and success are not
/// stored; `true_length` is recovered as one past the last step with a
/// non-zero action or reward, and `success` from a positive final reward.
pub fn trajectories_from_csv(text: &str) -> Result<Vec<Trajectory>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Empty("trajectory csv"))?;
    if !header.starts_with(CSV_HEADER) {
        return Err(Error::Incomplete(format!("unexpected header `{header}`")));
    }
    let mut out: Vec<Trajectory> = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 10 {
            return Err(Error::Incomplete(format!("line {}: {} fields", ln + 2, f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Incomplete(format!("line {}: bad integer `{s}`", ln + 2)));
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Incomplete(format!("line {}: bad number `{s}`", ln + 2)));
        let key = (int(f[0])?, int(f[1])?);
        if current != Some(key) {
            out.push(Trajectory {
                task_id: key.0,
                states: Vec::new(),
                actions: Vec::new(),
                rewards: Vec::new(),
                true_length: 0,
                success: false,
            });
            current = Some(key);
        }
        let tr = out.last_mut().unwrap();
        tr.states.push([num(f[3])?, num(f[4])?, num(f[5])?, num(f[6])?]);
        tr.actions.push([num(f[7])?, num(f[8])?]);
        tr.rewards.push(num(f[9])?);
    }
    for tr in &mut out {
        let last = (0..tr.horizon())
            .rev()
            .find(|&t| tr.actions[t] != [0.0; ACTION_DIM] || tr.rewards[t] != 0.0);
        tr.true_length = last.map_or(tr.horizon(), |t| t + 1);
        tr.success = tr.rewards.get(tr.true_length - 1).is_some_and(|&r| r > 0.0);
    }
    Ok(out)
}
