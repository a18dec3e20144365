//! Task-conditioned denoising diffusion over whole trajectories.
//!
//! A trajectory of `H` steps with `D = state_dim + action_dim` features is
//! normalized into `[-1, 1]` with fixed environment bounds, flattened
//! step-major, and modelled as one `H·D` vector. The noise predictor sees the
//! noisy vector, a sinusoidal embedding of the diffusion step, and the task
//! one-hot. Steps are 1-based throughout: `t ∈ [1, T]`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent::SkilledSet;
use crate::autodiff::{Activation, AdamState, Matrix, NetGrads, NetParams, Tape};
use crate::error::{shape_err, Error, Result};
use crate::seed::{self, Rng};
use crate::tasksuite::{Trajectory, ACTION_DIM, STATE_DIM};

pub const TRAJ_FEATURES: usize = STATE_DIM + ACTION_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_start` to `beta_end` over `steps` entries.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion steps must be >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config("betas must be non-empty and inside (0, 1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        let sigmas = betas.iter().map(|b| b.sqrt()).collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            sigmas,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::OutOfRange {
                what: "diffusion step",
                index: t,
                limit: self.steps(),
            });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·eps`.
pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    let i = schedule.check(t)?;
    if x0.len() != eps.len() {
        return shape_err("q_sample", format!("x0 has {} entries, eps {}", x0.len(), eps.len()));
    }
    let ab = schedule.alpha_bars[i];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// One forward transition `x_t = √α_t·x_{t−1} + √(1−α_t)·eps`.
pub fn q_step(x_prev: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    let i = schedule.check(t)?;
    if x_prev.len() != eps.len() {
        return shape_err("q_step", "eps shape differs from x");
    }
    let al = schedule.alphas[i];
    let (a, b) = (al.sqrt(), (1.0 - al).sqrt());
    Ok(x_prev.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Reverse-process mean `(x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t`.
pub fn posterior_mean(x_t: &[f64], eps_hat: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    let i = schedule.check(t)?;
    if x_t.len() != eps_hat.len() {
        return shape_err("posterior_mean", "noise prediction shape differs from x");
    }
    let coef = schedule.betas[i] / (1.0 - schedule.alpha_bars[i]).sqrt();
    let inv = 1.0 / schedule.alphas[i].sqrt();
    Ok(x_t.iter().zip(eps_hat).map(|(x, e)| inv * (x - coef * e)).collect())
}

/// Fixed per-feature bounds mapping raw trajectories into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub position_bound: f64,
    pub velocity_bound: f64,
    pub action_bound: f64,
}

impl Normalizer {
    pub fn new(vmax: f64) -> Self {
        Self {
            position_bound: 2.0,
            velocity_bound: vmax,
            action_bound: 1.0,
        }
    }

    fn bounds(&self) -> [f64; TRAJ_FEATURES] {
        let (p, v, a) = (self.position_bound, self.velocity_bound, self.action_bound);
        [p, p, v, v, a, a]
    }

    pub fn normalize(&self, tr: &Trajectory) -> TrajTensor {
        let b = self.bounds();
        let mut data = Vec::with_capacity(tr.horizon() * TRAJ_FEATURES);
        for t in 0..tr.horizon() {
            let s = tr.states[t];
            let a = tr.actions[t];
            let row = [s[0], s[1], s[2], s[3], a[0], a[1]];
            data.extend(row.iter().zip(&b).map(|(x, bb)| x / bb));
        }
        TrajTensor {
            horizon: tr.horizon(),
            data,
            task_id: tr.task_id,
        }
    }

    /// Rewards of the result are zero; `true_length` comes from the last
    /// step whose action is not exactly zero.
    pub fn denormalize(&self, x: &TrajTensor) -> Trajectory {
        let b = self.bounds();
        let mut states = Vec::with_capacity(x.horizon);
        let mut actions = Vec::with_capacity(x.horizon);
        for t in 0..x.horizon {
            let r = &x.data[t * TRAJ_FEATURES..(t + 1) * TRAJ_FEATURES];
            states.push([r[0] * b[0], r[1] * b[1], r[2] * b[2], r[3] * b[3]]);
            actions.push([r[4] * b[4], r[5] * b[5]]);
        }
        let true_length = (0..x.horizon)
            .rev()
            .find(|&t| actions[t] != [0.0; ACTION_DIM])
            .map_or(x.horizon, |t| t + 1);
        Trajectory {
            task_id: x.task_id,
            states,
            actions,
            rewards: vec![0.0; x.horizon],
            true_length,
            success: false,
        }
    }
}

/// A normalized trajectory flattened step-major into `H·D` values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajTensor {
    pub horizon: usize,
    pub data: Vec<f64>,
    pub task_id: usize,
}

impl TrajTensor {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * TRAJ_FEATURES..(t + 1) * TRAJ_FEATURES]
    }
}

pub fn timestep_embedding(t: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// What the network output means. Either way the denoiser reports a noise
/// prediction `ε_θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    /// The network output is `ε_θ` itself.
    Epsilon,
    /// The network output is a clean-trajectory estimate `x̂0`, converted
    /// with `ε_θ = (x_t − √ᾱ_t·x̂0)/√(1−ᾱ_t)`. The conversion acts as a skip
    /// connection from `x_t`, which a hidden layer narrower than `H·D` cannot
    /// otherwise carry.
    Sample,
}

/// Noise predictor `ε_θ(x_t, t, task)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub net: NetParams,
    pub horizon: usize,
    pub num_tasks: usize,
    pub time_embed_dim: usize,
    pub prediction: Prediction,
    /// `ᾱ_t` for `t = 1..=T`, used by [`Prediction::Sample`].
    alpha_bars: Vec<f64>,
}

impl Denoiser {
    pub fn new(
        horizon: usize,
        num_tasks: usize,
        time_embed_dim: usize,
        hidden: &[usize],
        prediction: Prediction,
        schedule: &NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        let flat = horizon * TRAJ_FEATURES;
        let mut sizes = vec![flat + time_embed_dim + num_tasks];
        sizes.extend_from_slice(hidden);
        sizes.push(flat);
        Ok(Self {
            net: NetParams::init(&sizes, Activation::Relu, seed)?,
            horizon,
            num_tasks,
            time_embed_dim,
            prediction,
            alpha_bars: schedule.alpha_bars().to_vec(),
        })
    }

    /// JSON checkpoint: the conditioning layout plus the network.
    pub fn to_json(&self) -> Result<String> {
        let net: serde_json::Value = serde_json::from_str(&self.net.to_json()?)?;
        Ok(serde_json::json!({
            "horizon": self.horizon,
            "num_tasks": self.num_tasks,
            "time_embed_dim": self.time_embed_dim,
            "prediction": self.prediction,
            "alpha_bars": self.alpha_bars,
            "net": net,
        })
        .to_string())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Ck {
            horizon: usize,
            num_tasks: usize,
            time_embed_dim: usize,
            prediction: Prediction,
            alpha_bars: Vec<f64>,
            net: serde_json::Value,
        }
        let ck: Ck = serde_json::from_str(text)?;
        let den = Self {
            net: NetParams::from_json(&ck.net.to_string())?,
            horizon: ck.horizon,
            num_tasks: ck.num_tasks,
            time_embed_dim: ck.time_embed_dim,
            prediction: ck.prediction,
            alpha_bars: ck.alpha_bars,
        };
        let flat = den.flat_dim();
        if den.net.input_dim() != flat + den.time_embed_dim + den.num_tasks || den.net.output_dim() != flat {
            return shape_err("denoiser checkpoint", "network widths do not match the conditioning layout");
        }
        if den.alpha_bars.is_empty() || den.alpha_bars.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::Config("denoiser checkpoint: alpha_bars must lie in (0, 1)".into()));
        }
        Ok(den)
    }

    pub fn flat_dim(&self) -> usize {
        self.horizon * TRAJ_FEATURES
    }

    fn conditioned_input(&self, x_t: &Matrix, ts: &[usize], tasks: &[usize]) -> Result<Matrix> {
        let n = x_t.rows();
        if x_t.cols() != self.flat_dim() || ts.len() != n || tasks.len() != n {
            return shape_err(
                "denoiser input",
                format!("x {:?}, {} steps, {} task ids", x_t.shape(), ts.len(), tasks.len()),
            );
        }
        let width = self.net.input_dim();
        let mut data = Vec::with_capacity(n * width);
        for i in 0..n {
            if tasks[i] >= self.num_tasks {
                return Err(Error::OutOfRange {
                    what: "task id",
                    index: tasks[i],
                    limit: self.num_tasks,
                });
            }
            if ts[i] == 0 || ts[i] > self.alpha_bars.len() {
                return Err(Error::OutOfRange {
                    what: "diffusion step",
                    index: ts[i],
                    limit: self.alpha_bars.len(),
                });
            }
            data.extend_from_slice(x_t.row(i));
            data.extend(timestep_embedding(ts[i], self.time_embed_dim));
            data.extend((0..self.num_tasks).map(|k| if k == tasks[i] { 1.0 } else { 0.0 }));
        }
        Matrix::from_vec(n, width, data)
    }

    /// Row-wise coefficients `(1/√(1−ᾱ_t), √ᾱ_t/√(1−ᾱ_t))` broadcast to the batch shape.
    fn sample_coefficients(&self, n: usize, ts: &[usize]) -> Result<(Matrix, Matrix)> {
        let d = self.flat_dim();
        let (mut c_x, mut c_f) = (Vec::with_capacity(n * d), Vec::with_capacity(n * d));
        for &t in ts {
            let ab = self.alpha_bars[t - 1];
            let inv = 1.0 / (1.0 - ab).sqrt();
            c_x.extend(std::iter::repeat_n(inv, d));
            c_f.extend(std::iter::repeat_n(ab.sqrt() * inv, d));
        }
        Ok((Matrix::from_vec(n, d, c_x)?, Matrix::from_vec(n, d, c_f)?))
    }

    pub fn predict(&self, x_t: &Matrix, ts: &[usize], tasks: &[usize]) -> Result<Matrix> {
        let out = self.net.forward(&self.conditioned_input(x_t, ts, tasks)?)?;
        match self.prediction {
            Prediction::Epsilon => Ok(out),
            Prediction::Sample => {
                let (c_x, c_f) = self.sample_coefficients(x_t.rows(), ts)?;
                let a = x_t.zip_map(&c_x, |x, c| x * c)?;
                let b = out.zip_map(&c_f, |f, c| f * c)?;
                a.zip_map(&b, |p, q| p - q)
            }
        }
    }

    /// Mean absolute error between `eps` and the prediction, plus its gradient.
    pub fn l1_loss_and_grad(&self, x_t: &Matrix, eps: &Matrix, ts: &[usize], tasks: &[usize]) -> Result<(f64, NetGrads)> {
        let input = self.conditioned_input(x_t, ts, tasks)?;
        let mut tape = Tape::new();
        let x = tape.leaf(input);
        let vars = self.net.forward_on(&mut tape, x)?;
        let pred = match self.prediction {
            Prediction::Epsilon => vars.output,
            Prediction::Sample => {
                let (c_x, c_f) = self.sample_coefficients(x_t.rows(), ts)?;
                let skip = tape.leaf(x_t.zip_map(&c_x, |x, c| x * c)?);
                let c_f = tape.leaf(c_f);
                let scaled = tape.mul(vars.output, c_f)?;
                tape.sub(skip, scaled)?
            }
        };
        let target = tape.leaf(eps.clone());
        let diff = tape.sub(pred, target)?;
        let abs = tape.abs(diff);
        let loss = tape.mean(abs);
        let g = tape.backward(loss)?;
        Ok((tape.scalar_value(loss), vars.grads(&g)))
    }
}

pub fn l1_loss(pred: &Matrix, eps: &Matrix) -> Result<f64> {
    Ok(pred.zip_map(eps, |a, b| (a - b).abs())?.mean())
}

/// One reverse step on a batch. At `t = 1` the noise term is dropped.
pub fn denoise_step(
    denoiser: &Denoiser,
    x_t: &Matrix,
    t: usize,
    tasks: &[usize],
    schedule: &NoiseSchedule,
    z: &Matrix,
) -> Result<Matrix> {
    schedule.check(t)?;
    x_t.same_shape("denoise_step", z)?;
    let eps = denoiser.predict(x_t, &vec![t; x_t.rows()], tasks)?;
    let mean = Matrix::from_vec(x_t.rows(), x_t.cols(), posterior_mean(x_t.data(), eps.data(), t, schedule)?)?;
    if t == 1 {
        return Ok(mean);
    }
    let s = schedule.sigma(t);
    mean.zip_map(z, |m, zz| m + s * zz)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub prediction: Prediction,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.1,
            hidden: vec![256, 256],
            time_embed_dim: 32,
            prediction: Prediction::Sample,
            lr: 1e-3,
            batch_size: 32,
            epochs: 1000,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)?;
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.batch_size == 0 || self.lr <= 0.0 {
            return Err(Error::Config("diffusion: hidden, batch_size and lr must be positive".into()));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(Error::Config("diffusion.time_embed_dim must be even".into()));
        }
        Ok(())
    }
}

/// Denoiser with its schedule and optimizer state.
#[derive(Debug, Clone)]
pub struct TrajectoryDiffusion {
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub normalizer: Normalizer,
    opt: AdamState,
    batch_size: usize,
}

impl TrajectoryDiffusion {
    pub fn new(cfg: &DiffusionConfig, horizon: usize, num_tasks: usize, vmax: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let schedule = NoiseSchedule::linear(cfg.steps, cfg.beta_start, cfg.beta_end)?;
        let denoiser = Denoiser::new(horizon, num_tasks, cfg.time_embed_dim, &cfg.hidden, cfg.prediction, &schedule, seed)?;
        Ok(Self {
            opt: AdamState::new(&denoiser.net, cfg.lr),
            denoiser,
            schedule,
            normalizer: Normalizer::new(vmax),
            batch_size: cfg.batch_size,
        })
    }

    /// Noise a batch at uniformly drawn steps and take one Adam step on the L1
    /// noise-prediction loss.
    pub fn train_step(&mut self, batch: &[&TrajTensor], rng: &mut Rng) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("diffusion batch"));
        }
        let d = self.denoiser.flat_dim();
        let n = batch.len();
        let mut xt = Vec::with_capacity(n * d);
        let mut eps_all = Vec::with_capacity(n * d);
        let mut ts = Vec::with_capacity(n);
        let mut tasks = Vec::with_capacity(n);
        for item in batch {
            if item.data.len() != d {
                return shape_err("train_step", format!("trajectory has {} values, model expects {d}", item.data.len()));
            }
            let t = rng.random_range(1..=self.schedule.steps());
            let eps: Vec<f64> = (0..d).map(|_| seed::normal(rng)).collect();
            xt.extend(q_sample(&item.data, t, &eps, &self.schedule)?);
            eps_all.extend(eps);
            ts.push(t);
            tasks.push(item.task_id);
        }
        let xt = Matrix::from_vec(n, d, xt)?;
        let eps = Matrix::from_vec(n, d, eps_all)?;
        let (loss, grads) = self.denoiser.l1_loss_and_grad(&xt, &eps, &ts, &tasks)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("diffusion loss"));
        }
        self.opt.step(&mut self.denoiser.net, &grads)?;
        Ok(loss)
    }

    /// Ancestral sampling from `x_T ~ N(0, I)`; the output is clamped to `[-1, 1]`.
    pub fn sample(&self, task_id: usize, n: usize, seed: u64) -> Result<Vec<TrajTensor>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut rng = seed::rng(seed, "diffusion_sample", &[task_id as u64]);
        let d = self.denoiser.flat_dim();
        let tasks = vec![task_id; n];
        let mut x = crate::sac::normal_matrix(n, d, &mut rng);
        for t in (1..=self.schedule.steps()).rev() {
            let z = if t > 1 {
                crate::sac::normal_matrix(n, d, &mut rng)
            } else {
                Matrix::zeros(n, d)
            };
            x = denoise_step(&self.denoiser, &x, t, &tasks, &self.schedule, &z)?;
        }
        Ok((0..n)
            .map(|i| TrajTensor {
                horizon: self.denoiser.horizon,
                data: x.row(i).iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
                task_id,
            })
            .collect())
    }

    /// Generated trajectories in environment units.
    pub fn generate(&self, task_id: usize, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
        Ok(self
            .sample(task_id, n, seed)?
            .iter()
            .map(|x| self.normalizer.denormalize(x))
            .collect())
    }

    /// Trains on the union of the current task's real set and replayed sets
    /// (generated by the caller from this model before the call). Each epoch
    /// visits the shuffled union once in minibatches.
    pub fn continual_fit(&mut self, real: &SkilledSet, replayed: &[SkilledSet], epochs: usize, seed: u64) -> Result<Vec<f64>> {
        if real.trajectories.is_empty() {
            return Err(Error::Empty("real skilled set"));
        }
        let mut items: Vec<TrajTensor> = Vec::new();
        for set in std::iter::once(real).chain(replayed) {
            items.extend(set.trajectories.iter().map(|tr| self.normalizer.normalize(tr)));
        }
        self.fit(&items, epochs, seed)
    }

    /// Mean training loss per epoch.
    pub fn fit(&mut self, items: &[TrajTensor], epochs: usize, seed: u64) -> Result<Vec<f64>> {
        let mut rng = seed::rng(seed, "diffusion_fit", &[]);
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut count = 0;
            for chunk in order.chunks(self.batch_size) {
                let batch: Vec<&TrajTensor> = chunk.iter().map(|&i| &items[i]).collect();
                total += self.train_step(&batch, &mut rng)?;
                count += 1;
            }
            history.push(total / count.max(1) as f64);
        }
        Ok(history)
    }
}

pub fn batches_per_epoch(items: usize, batch_size: usize) -> usize {
    items.div_ceil(batch_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasksuite::{make_task, rollout, ActionMode, ScriptedController, SuiteConfig};

    #[test]
    fn schedule_products() {
        let s = NoiseSchedule::linear(1, 0.3, 0.3).unwrap();
        assert!((s.alpha_bar(1) - 0.7).abs() < 1e-15);
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        let b = 0.05;
        let s = NoiseSchedule::linear(6, b, b).unwrap();
        for t in 1..=6 {
            assert!((s.alpha_bar(t) - (1.0 - b).powi(t as i32)).abs() < 1e-14);
            assert!((s.sigma(t) - b.sqrt()).abs() < 1e-15);
        }
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(3, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(3, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::linear(3, 0.1, 1.0).is_err());
    }

    #[test]
    fn default_schedule_nearly_destroys_signal() {
        let c = DiffusionConfig::default();
        let s = NoiseSchedule::linear(c.steps, c.beta_start, c.beta_end).unwrap();
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(*s.alpha_bars().last().unwrap() <= 0.01);
    }

    #[test]
    fn q_sample_special_cases() {
        let sched = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
        let x0 = [0.5, -0.25, 1.0];
        let out = q_sample(&x0, 4, &[0.0; 3], &sched).unwrap();
        for (o, x) in out.iter().zip(x0) {
            assert!((o - sched.alpha_bar(4).sqrt() * x).abs() < 1e-15);
        }
        assert!(q_sample(&x0, 0, &[0.0; 3], &sched).is_err());
        assert!(q_sample(&x0, 11, &[0.0; 3], &sched).is_err());
        assert!(q_sample(&x0, 1, &[0.0; 2], &sched).is_err());
    }

    #[test]
    fn zero_noise_prediction_divides_by_sqrt_alpha() {
        let sched = NoiseSchedule::linear(5, 0.01, 0.1).unwrap();
        let mut den = Denoiser::new(2, 2, 4, &[8], Prediction::Epsilon, &sched, 0).unwrap();
        den.net.zero_all();
        let x = Matrix::from_rows(&[(0..12).map(|i| i as f64 * 0.1 - 0.5).collect()]).unwrap();
        let z = Matrix::zeros(1, 12);
        let out = denoise_step(&den, &x, 3, &[1], &sched, &z).unwrap();
        for (o, xv) in out.data().iter().zip(x.data()) {
            assert_eq!(*o, xv / sched.alpha(3).sqrt());
        }
        // t = 1 ignores z
        let z1 = Matrix::filled(1, 12, 5.0);
        let a = denoise_step(&den, &x, 1, &[0], &sched, &z1).unwrap();
        let b = denoise_step(&den, &x, 1, &[0], &sched, &z).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exact_clean_estimate_recovers_the_noise() {
        let sched = NoiseSchedule::linear(8, 1e-3, 0.3).unwrap();
        let mut den = Denoiser::new(2, 1, 4, &[6], Prediction::Sample, &sched, 0).unwrap();
        let x0: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        den.net.zero_all();
        let last = den.net.biases_mut().len() - 1;
        den.net.biases_mut()[last] = Matrix::row_vector(&x0);
        let eps: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).cos()).collect();
        for t in [1, 4, 8] {
            let x_t = Matrix::row_vector(&q_sample(&x0, t, &eps, &sched).unwrap());
            let pred = den.predict(&x_t, &[t], &[0]).unwrap();
            for (p, e) in pred.data().iter().zip(&eps) {
                assert!((p - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_mean_by_hand() {
        // β=0.1, α=0.9, ᾱ=0.5: (1 − 0.1/√0.5)/√0.9
        let sched = NoiseSchedule::from_betas(vec![1.0 - 0.5 / 0.9, 0.1]).unwrap();
        assert!((sched.alpha_bar(2) - 0.5).abs() < 1e-15);
        let mu = posterior_mean(&[1.0], &[1.0], 2, &sched).unwrap()[0];
        let expected = (1.0 - 0.1 / 0.5f64.sqrt()) / 0.9f64.sqrt();
        assert!((mu - expected).abs() < 1e-12);
        assert!((mu - 0.905021).abs() < 1e-6);
    }

    #[test]
    fn l1_loss_vanishes_for_exact_prediction() {
        let e = Matrix::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.0]]).unwrap();
        assert_eq!(l1_loss(&e, &e).unwrap(), 0.0);
        assert!(l1_loss(&Matrix::zeros(2, 2), &e).unwrap() > 0.0);
    }

    #[test]
    fn zero_predictor_loss_is_half_normal_mean() {
        let cfg = DiffusionConfig {
            hidden: vec![8],
            prediction: Prediction::Epsilon,
            ..DiffusionConfig::default()
        };
        let mut model = TrajectoryDiffusion::new(&cfg, 16, 2, 1.0, 0).unwrap();
        model.denoiser.net.zero_all();
        let items: Vec<TrajTensor> = (0..64)
            .map(|i| TrajTensor {
                horizon: 16,
                data: vec![0.1 * (i % 5) as f64; 16 * TRAJ_FEATURES],
                task_id: i % 2,
            })
            .collect();
        let batch: Vec<&TrajTensor> = items.iter().collect();
        let mut rng = seed::rng(3, "t", &[]);
        let loss = model.train_step(&batch, &mut rng).unwrap();
        assert!((loss - (2.0 / std::f64::consts::PI).sqrt()).abs() < 0.02, "{loss}");
    }

    #[test]
    fn normalization_round_trip() {
        let suite = SuiteConfig::default();
        let task = make_task(1, &suite).unwrap();
        let ctrl = ScriptedController::for_task(&task);
        let tr = rollout(&task, &ctrl, 2, ActionMode::Stochastic).unwrap();
        let norm = Normalizer::new(suite.vmax);
        let x = norm.normalize(&tr);
        assert!(x.data.iter().all(|v| v.abs() <= 1.001));
        let back = norm.denormalize(&x);
        assert_eq!(back.states, tr.states);
        assert_eq!(back.actions, tr.actions);
        assert_eq!(back.true_length, tr.true_length);
    }

    #[test]
    fn sampling_is_seeded_and_shaped() {
        let cfg = DiffusionConfig {
            steps: 10,
            hidden: vec![16],
            ..DiffusionConfig::default()
        };
        let model = TrajectoryDiffusion::new(&cfg, 8, 3, 1.0, 1).unwrap();
        let a = model.sample(2, 4, 7).unwrap();
        assert_eq!(a, model.sample(2, 4, 7).unwrap());
        assert_ne!(a, model.sample(2, 4, 8).unwrap());
        assert_eq!(a.len(), 4);
        for x in &a {
            assert_eq!(x.data.len(), 8 * TRAJ_FEATURES);
            assert_eq!(x.task_id, 2);
            assert!(x.data.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn denoiser_checkpoint_round_trip() {
        let sched = NoiseSchedule::linear(5, 0.01, 0.1).unwrap();
        let den = Denoiser::new(4, 3, 6, &[5], Prediction::Sample, &sched, 9).unwrap();
        let back = Denoiser::from_json(&den.to_json().unwrap()).unwrap();
        assert_eq!(back, den);
        let mut bad: serde_json::Value = serde_json::from_str(&den.to_json().unwrap()).unwrap();
        bad["num_tasks"] = 4.into();
        assert!(Denoiser::from_json(&bad.to_string()).is_err());
    }

    #[test]
    fn epoch_batch_count() {
        assert_eq!(batches_per_epoch(60, 32), 2);
        assert_eq!(batches_per_epoch(64, 32), 2);
        assert_eq!(batches_per_epoch(65, 32), 3);
    }
}
