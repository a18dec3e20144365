//! Analytic-versus-numeric gradient cases shared by the core gradient test
//! and the acceptance suite.

use distr_core::agent::{bc_loss, bc_loss_and_grad};
use distr_core::autodiff::check::{finite_difference, max_relative_error};
use distr_core::autodiff::{gradients, loss_value, Activation, LossSpec, Matrix, NetGrads, NetParams, Tape};
use distr_core::baselines::{ewc_penalty, ewc_penalty_grad, EwcAnchor};
use distr_core::sac::{normal_matrix, reparameterized_sample, GaussianPolicy};
use distr_core::seed;
use distr_core::trajdiff::{l1_loss, Denoiser, NoiseSchedule, Prediction};

pub const STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
pub const FLOOR: f64 = 1e-5;

pub struct CaseResult {
    pub name: String,
    pub max_rel_err: f64,
}

fn compare(name: String, params: &NetParams, analytic: &NetGrads, f: impl FnMut(&NetParams) -> distr_core::Result<f64>) -> CaseResult {
    let numeric = finite_difference(params, STEP, f).unwrap();
    CaseResult {
        name,
        max_rel_err: max_relative_error(analytic, &numeric, FLOOR),
    }
}

fn random_matrix(rows: usize, cols: usize, scale: f64, seed_: u64) -> Matrix {
    let mut rng = seed::rng(seed_, "gradcheck_input", &[]);
    normal_matrix(rows, cols, &mut rng).map(|x| scale * x)
}

/// Zero biases can put a ReLU input exactly on its kink (a sample whose
/// previous layer is fully inactive); random offsets move it off.
fn jitter(p: &mut NetParams, seed_: u64) {
    for (i, b) in p.biases_mut().iter_mut().enumerate() {
        *b = random_matrix(1, b.cols(), 0.1, seed_ + 1000 + i as u64);
    }
}

const CHAINS: &[&[&str]] = &[
    &["tanh"],
    &["relu"],
    &["square"],
    &["abs"],
    &["exp"],
    &["exp", "log"],
    &["tanh", "square"],
];

/// Every case for one random network seed.
pub fn cases_for_seed(s: u64) -> Vec<CaseResult> {
    let act = [Activation::Tanh, Activation::Relu, Activation::Identity][(s % 3) as usize];
    let mut out = Vec::new();

    let mut net = NetParams::init(&[3, 5, 4, 2], act, seed::derive(s, "net", &[])).unwrap();
    jitter(&mut net, s);
    let x = random_matrix(6, 3, 1.0, s);
    for chain in CHAINS {
        for reduce in ["sum", "mean"] {
            let spec = LossSpec::parse(chain, reduce).unwrap();
            let (_, g) = gradients(&net, &spec, &x).unwrap();
            out.push(compare(format!("{act:?} {}-{reduce}", chain.join("-")), &net, &g, |p| loss_value(p, &spec, &x)));
        }
    }

    let obs_dim = 6;
    let mut policy = GaussianPolicy::new(obs_dim, &[8, 8], seed::derive(s, "policy", &[])).unwrap();
    jitter(&mut policy.trunk, s + 1);
    let obs = random_matrix(5, obs_dim, 0.7, s + 100);
    let actions = random_matrix(5, 2, 0.5, s + 200).map(f64::tanh);
    let (_, g) = bc_loss_and_grad(&policy, &obs, &actions).unwrap();
    out.push(compare("bc nll".into(), &policy.trunk, &g, |p| {
        let mut q = policy.clone();
        q.trunk = p.clone();
        bc_loss(&q, &obs, &actions)
    }));

    // actor objective α·log π − min(Q1, Q2) through the reparameterized sample
    let critics: Vec<NetParams> = (0..2)
        .map(|i| {
            let mut c = NetParams::init(&[obs_dim + 2, 8, 1], Activation::Relu, seed::derive(s, "critic", &[i])).unwrap();
            jitter(&mut c, s + 2 + i);
            c
        })
        .collect();
    let noise = random_matrix(5, 2, 1.0, s + 300);
    let actor_loss = |p: &NetParams, want_grad: bool| -> (f64, Option<NetGrads>) {
        let mut pol = policy.clone();
        pol.trunk = p.clone();
        let mut tape = Tape::new();
        let o = tape.leaf(obs.clone());
        let pv = pol.on_tape(&mut tape, o).unwrap();
        let (a, logp) = reparameterized_sample(&mut tape, &pv, &noise).unwrap();
        let sa = tape.concat_cols(o, a).unwrap();
        let q1 = critics[0].forward_on(&mut tape, sa).unwrap().output;
        let q2 = critics[1].forward_on(&mut tape, sa).unwrap().output;
        let q = tape.minimum(q1, q2).unwrap();
        let ent = tape.scale(logp, 0.2);
        let per = tape.sub(ent, q).unwrap();
        let loss = tape.mean(per);
        let value = tape.scalar_value(loss);
        let grad = want_grad.then(|| pv.net.grads(&tape.backward(loss).unwrap()));
        (value, grad)
    };
    let g = actor_loss(&policy.trunk, true).1.unwrap();
    out.push(compare("sac actor".into(), &policy.trunk, &g, |p| Ok(actor_loss(p, false).0)));

    // critic regression onto fixed targets
    let sa = random_matrix(5, obs_dim + 2, 1.0, s + 400);
    let target = random_matrix(5, 1, 1.0, s + 500);
    let critic_loss = |p: &NetParams, want_grad: bool| -> (f64, Option<NetGrads>) {
        let mut tape = Tape::new();
        let x = tape.leaf(sa.clone());
        let vars = p.forward_on(&mut tape, x).unwrap();
        let y = tape.leaf(target.clone());
        let d = tape.sub(vars.output, y).unwrap();
        let sq = tape.square(d);
        let loss = tape.mean(sq);
        let value = tape.scalar_value(loss);
        (value, want_grad.then(|| vars.grads(&tape.backward(loss).unwrap())))
    };
    let g = critic_loss(&critics[0], true).1.unwrap();
    out.push(compare("sac critic".into(), &critics[0], &g, |p| Ok(critic_loss(p, false).0)));

    let sched = NoiseSchedule::linear(10, 1e-4, 0.2).unwrap();
    for prediction in [Prediction::Epsilon, Prediction::Sample] {
        let mut den = Denoiser::new(3, 2, 4, &[6], prediction, &sched, seed::derive(s, "denoiser", &[])).unwrap();
        jitter(&mut den.net, s + 4);
        let x_t = random_matrix(4, den.flat_dim(), 1.0, s + 600);
        let eps = random_matrix(4, den.flat_dim(), 1.0, s + 700);
        let ts = [1, 4, 7, 10];
        let tasks = [0, 1, 1, 0];
        let (_, g) = den.l1_loss_and_grad(&x_t, &eps, &ts, &tasks).unwrap();
        out.push(compare(format!("denoiser l1 {prediction:?}"), &den.net, &g, |p| {
            let mut d = den.clone();
            d.net = p.clone();
            l1_loss(&d.predict(&x_t, &ts, &tasks)?, &eps)
        }));
    }

    let mut fisher = NetGrads::zeros_like(&net);
    let mut theta = net.clone();
    for (i, (f, t)) in fisher.weights.iter_mut().zip(theta.weights_mut()).enumerate() {
        *f = random_matrix(f.rows(), f.cols(), 1.0, s + 800 + i as u64).map(|v| v * v);
        *t = t.map(|v| v + 0.1);
    }
    let anchors = [EwcAnchor { theta, fisher }];
    let g = ewc_penalty_grad(&net, &anchors, 3.0).unwrap();
    out.push(compare("ewc penalty".into(), &net, &g, |p| ewc_penalty(p, &anchors, 3.0)));
    out
}
