//! Multilayer perceptrons, their gradients, and JSON checkpoints.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{Gradients, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::seed;

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn on_tape(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(v),
            Activation::Relu => tape.relu(v),
            Activation::Identity => v,
        }
    }
}

/// Anything Adam can update: an ordered list of flat parameter blocks.
pub trait Parameters {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
}

impl Parameters for Vec<f64> {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

/// Weights are stored `fan_in × fan_out` so a batch maps as `X·W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    layer_sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<Matrix>,
    biases: Vec<Matrix>,
}

/// Gradient (or moment) blocks shaped like a [`NetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Matrix>,
}

impl NetGrads {
    pub fn zeros_like(p: &NetParams) -> Self {
        Self {
            weights: p.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: p.biases.iter().map(|b| Matrix::zeros(1, b.cols())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) -> Result<()> {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            if a.len() != b.len() {
                return shape_err("grad add", format!("{} vs {}", a.len(), b.len()));
            }
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Parameters for NetGrads {
    fn blocks(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.data()])
            .collect()
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.data_mut()])
            .collect()
    }
}

impl Parameters for NetParams {
    fn blocks(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.data()])
            .collect()
    }
    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.data_mut()])
            .collect()
    }
}

/// Leaves created for one forward pass on a tape.
pub struct NetVars {
    pub output: Var,
    params: Vec<(Var, Var)>,
}

impl NetVars {
    pub fn grads(&self, g: &Gradients) -> NetGrads {
        NetGrads {
            weights: self.params.iter().map(|(w, _)| g.wrt(w.to_owned())).collect(),
            biases: self.params.iter().map(|(_, b)| g.wrt(b.to_owned())).collect(),
        }
    }
}

impl NetParams {
    /// Uniform weights in `±sqrt(1/fan_in)`, zero biases.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer_sizes must have at least two positive entries, got {layer_sizes:?}"
            )));
        }
        let mut rng = seed::rng(seed, "net_init", &[]);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = init_scale(fan_in);
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-scale..=scale))
                .collect();
            weights.push(Matrix::from_vec(fan_in, fan_out, data)?);
            biases.push(Matrix::zeros(1, fan_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            weights,
            biases,
        })
    }

    /// Builds a network from explicit weights (`fan_in × fan_out`) and biases.
    pub fn from_parts(activation: Activation, weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return shape_err("from_parts", format!("{} weights, {} biases", weights.len(), biases.len()));
        }
        let mut layer_sizes = vec![weights[0].rows()];
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.rows() != *layer_sizes.last().unwrap() || w.cols() != b.len() {
                return shape_err(
                    "from_parts",
                    format!("layer {i}: weight {:?}, bias {}", w.shape(), b.len()),
                );
            }
            layer_sizes.push(w.cols());
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        let p = Self {
            layer_sizes,
            activation,
            weights,
            biases: biases.iter().map(|b| Matrix::row_vector(b)).collect(),
        };
        if !p.blocks().iter().all(|b| b.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("network parameters"));
        }
        Ok(p)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Matrix] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Matrix] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Zeroes every weight and bias.
    pub fn zero_all(&mut self) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.input_dim() {
            return shape_err(
                "forward",
                format!("input width {} but network expects {}", input.cols(), self.input_dim()),
            );
        }
        Ok(())
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let last = self.weights.len() - 1;
        let mut h = input.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.matmul(w)?;
            for r in 0..z.rows() {
                for (zv, bv) in z.row_mut(r).iter_mut().zip(b.data()) {
                    *zv += bv;
                    if l < last {
                        *zv = self.activation.apply(*zv);
                    }
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Records a forward pass on `tape`, with the parameters as fresh leaves.
    pub fn forward_on(&self, tape: &mut Tape, input: Var) -> Result<NetVars> {
        self.check_input(tape.value(input))?;
        let last = self.weights.len() - 1;
        let mut h = input;
        let mut params = Vec::with_capacity(self.weights.len());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wv = tape.leaf(w.clone());
            let bv = tape.leaf(b.clone());
            params.push((wv, bv));
            let z = tape.matmul(h, wv)?;
            let z = tape.add_row(z, bv)?;
            h = if l < last { self.activation.on_tape(tape, z) } else { z };
        }
        Ok(NetVars { output: h, params })
    }

    /// `self ← (1 − tau)·self + tau·source`.
    pub fn polyak_from(&mut self, source: &NetParams, tau: f64) -> Result<()> {
        if self.layer_sizes != source.layer_sizes {
            return shape_err("polyak", "layer sizes differ");
        }
        for (t, s) in self.blocks_mut().into_iter().zip(source.blocks()) {
            t.iter_mut().zip(s).for_each(|(a, b)| *a = (1.0 - tau) * *a + tau * b);
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &NetParams) -> Result<f64> {
        if self.layer_sizes != other.layer_sizes {
            return shape_err("max_abs_diff", "layer sizes differ");
        }
        Ok(self
            .blocks()
            .iter()
            .zip(other.blocks())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&NetCheckpoint::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: NetCheckpoint = serde_json::from_str(text)?;
        ck.try_into()
    }
}

pub fn init_scale(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetCheckpoint {
    layer_sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl From<&NetParams> for NetCheckpoint {
    fn from(p: &NetParams) -> Self {
        Self {
            layer_sizes: p.layer_sizes.clone(),
            activation: p.activation,
            weights: p.weights.iter().map(Matrix::to_rows).collect(),
            biases: p.biases.iter().map(|b| b.data().to_vec()).collect(),
        }
    }
}

impl TryFrom<NetCheckpoint> for NetParams {
    type Error = Error;

    fn try_from(ck: NetCheckpoint) -> Result<Self> {
        let weights = ck
            .weights
            .iter()
            .map(|w| Matrix::from_rows(w))
            .collect::<Result<Vec<_>>>()?;
        let p = NetParams::from_parts(ck.activation, weights, ck.biases)?;
        if p.layer_sizes != ck.layer_sizes {
            return shape_err(
                "checkpoint",
                format!("layer_sizes {:?} disagree with arrays {:?}", ck.layer_sizes, p.layer_sizes),
            );
        }
        Ok(p)
    }
}

/// Elementwise primitives that may follow the network output in a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Tanh,
    Relu,
    Log,
    Exp,
    Square,
    Abs,
}

impl std::str::FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tanh" => Primitive::Tanh,
            "relu" => Primitive::Relu,
            "log" => Primitive::Log,
            "exp" => Primitive::Exp,
            "square" => Primitive::Square,
            "abs" => Primitive::Abs,
            other => return Err(Error::UnsupportedPrimitive(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

/// `reduce(p_n(…p_1(net(x))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub chain: Vec<Primitive>,
    pub reduce: Reduce,
}

impl LossSpec {
    /// Parses names such as `["square", "log"]` and `"mean"`.
    pub fn parse(chain: &[&str], reduce: &str) -> Result<Self> {
        let chain = chain.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>()?;
        let reduce = match reduce {
            "sum" => Reduce::Sum,
            "mean" => Reduce::Mean,
            other => return Err(Error::UnsupportedPrimitive(other.to_string())),
        };
        Ok(Self { chain, reduce })
    }

    fn record(&self, tape: &mut Tape, mut v: Var) -> Var {
        for p in &self.chain {
            v = match p {
                Primitive::Tanh => tape.tanh(v),
                Primitive::Relu => tape.relu(v),
                Primitive::Log => tape.log(v),
                Primitive::Exp => tape.exp(v),
                Primitive::Square => tape.square(v),
                Primitive::Abs => tape.abs(v),
            };
        }
        match self.reduce {
            Reduce::Sum => tape.sum(v),
            Reduce::Mean => tape.mean(v),
        }
    }

    fn eval(&self, out: Matrix) -> f64 {
        let mut m = out;
        for p in &self.chain {
            m = m.map(|x| match p {
                Primitive::Tanh => x.tanh(),
                Primitive::Relu => x.max(0.0),
                Primitive::Log => x.ln(),
                Primitive::Exp => x.exp(),
                Primitive::Square => x * x,
                Primitive::Abs => x.abs(),
            });
        }
        match self.reduce {
            Reduce::Sum => m.sum(),
            Reduce::Mean => m.mean(),
        }
    }
}

/// Loss value and exact reverse-mode parameter gradients.
pub fn gradients(params: &NetParams, loss: &LossSpec, batch: &Matrix) -> Result<(f64, NetGrads)> {
    let mut tape = Tape::new();
    let x = tape.leaf(batch.clone());
    let vars = params.forward_on(&mut tape, x)?;
    let l = loss.record(&mut tape, vars.output);
    let g = tape.backward(l)?;
    Ok((tape.scalar_value(l), vars.grads(&g)))
}

/// Loss value without gradients, used by finite-difference checks.
pub fn loss_value(params: &NetParams, loss: &LossSpec, batch: &Matrix) -> Result<f64> {
    Ok(loss.eval(params.forward(batch)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = NetParams::init(&[2, 2], Activation::Tanh, 11).unwrap();
        let b = NetParams::init(&[2, 2], Activation::Tanh, 11).unwrap();
        assert_eq!(a, b);
        let c = NetParams::init(&[3, 1], Activation::Relu, 5).unwrap();
        assert!(c.biases()[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_scale_matches_fan_in() {
        assert_eq!(init_scale(4), 0.5);
        let p = NetParams::init(&[4, 64], Activation::Tanh, 3).unwrap();
        assert!(p.weights()[0].max_abs() <= 0.5);
        // 256 draws should come close to the bound
        assert!(p.weights()[0].max_abs() > 0.45);
    }

    #[test]
    fn invalid_layer_sizes() {
        assert!(NetParams::init(&[3], Activation::Tanh, 0).is_err());
        assert!(NetParams::init(&[3, 0, 1], Activation::Tanh, 0).is_err());
    }

    #[test]
    fn identity_forward() {
        let p = NetParams::from_parts(Activation::Identity, vec![Matrix::identity(3)], vec![vec![0.0; 3]]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        assert_eq!(p.forward(&x).unwrap(), x);
    }

    #[test]
    fn single_linear_layer() {
        let p = NetParams::from_parts(Activation::Identity, vec![Matrix::scalar(2.0)], vec![vec![1.0]]).unwrap();
        let y = p.forward(&Matrix::scalar(3.0)).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn zero_weight_tanh_hidden_layer() {
        let mut p = NetParams::init(&[3, 4, 2], Activation::Tanh, 1).unwrap();
        p.zero_all();
        let x = Matrix::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let vars = p.forward_on(&mut tape, xv).unwrap();
        assert!(tape.value(vars.output).data().iter().all(|&v| v == 0.0));
        assert!(p.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = NetParams::init(&[3, 2], Activation::Tanh, 1).unwrap();
        assert!(p.forward(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn hand_gradient_of_mean_square() {
        let p = NetParams::from_parts(Activation::Identity, vec![Matrix::scalar(1.0)], vec![vec![0.0]]).unwrap();
        let loss = LossSpec::parse(&["square"], "mean").unwrap();
        let (l, g) = gradients(&p, &loss, &Matrix::scalar(2.0)).unwrap();
        assert_eq!(l, 4.0);
        assert_eq!(g.weights[0].data(), &[8.0]);
    }

    #[test]
    fn unsupported_primitive() {
        assert!(matches!(
            LossSpec::parse(&["softplus"], "mean"),
            Err(Error::UnsupportedPrimitive(_))
        ));
        assert!(LossSpec::parse(&["tanh"], "max").is_err());
    }

    #[test]
    fn constant_parameter_block_gets_zero_gradient() {
        // relu(0) kills the dependence on the first layer entirely
        let mut p = NetParams::init(&[2, 3, 1], Activation::Relu, 2).unwrap();
        p.weights_mut()[0].data_mut().iter_mut().for_each(|v| *v = 0.0);
        p.biases_mut()[0].data_mut().iter_mut().for_each(|v| *v = -1.0);
        let loss = LossSpec::parse(&["square"], "sum").unwrap();
        let (_, g) = gradients(&p, &loss, &Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap()).unwrap();
        assert_eq!(g.weights[0].max_abs(), 0.0);
        assert_eq!(g.weights[1].max_abs(), 0.0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = NetParams::init(&[5, 7, 3], Activation::Tanh, 99).unwrap();
        let back = NetParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        for key in ["layer_sizes", "activation", "weights", "biases"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn checkpoint_with_inconsistent_sizes_rejected() {
        let p = NetParams::init(&[2, 2], Activation::Tanh, 1).unwrap();
        let text = p.to_json().unwrap().replace("\"layer_sizes\":[2,2]", "\"layer_sizes\":[2,3]");
        assert!(NetParams::from_json(&text).is_err());
    }
}
