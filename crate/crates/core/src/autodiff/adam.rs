use super::net::Parameters;
use crate::error::{shape_err, Error, Result};

/// Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(params: &P, lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas<P: Parameters + ?Sized>(params: &P, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam update. Nothing is modified when the
    /// gradient is non-finite or misshapen.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: Parameters + ?Sized,
        G: Parameters + ?Sized,
    {
        let gb = grads.blocks();
        if gb.len() != self.m.len() || gb.iter().zip(&self.m).any(|(g, m)| g.len() != m.len()) {
            return shape_err("adam_step", "gradient blocks do not match optimizer state");
        }
        if gb.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradient"));
        }
        let mut pb = params.blocks_mut();
        if pb.len() != gb.len() || pb.iter().zip(&gb).any(|(p, g)| p.len() != g.len()) {
            return shape_err("adam_step", "parameter blocks do not match gradients");
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (bi, p) in pb.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[bi], &mut self.v[bi], gb[bi]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_moments() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(&p, 0.1);
        st.step(&mut p, &vec![0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.first_moment(), &[vec![0.0, 0.0]]);
        assert_eq!(st.second_moment(), &[vec![0.0, 0.0]]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(&p, 0.1);
        st.step(&mut p, &vec![1.0]).unwrap();
        // m̂ = v̂ = 1 → Δ = −0.1·1/(1 + 1e-8)
        assert!((p[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn identical_calls_identical_results() {
        let p0 = vec![0.3, 0.7];
        let g = vec![0.5, -1.5];
        let st0 = AdamState::new(&p0, 0.01);
        let (mut p1, mut s1) = (p0.clone(), st0.clone());
        let (mut p2, mut s2) = (p0.clone(), st0);
        s1.step(&mut p1, &g).unwrap();
        s2.step(&mut p2, &g).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn non_finite_gradient_aborts_update() {
        let mut p = vec![1.0];
        let mut st = AdamState::new(&p, 0.1);
        assert!(st.step(&mut p, &vec![f64::NAN]).is_err());
        assert_eq!(p, vec![1.0]);
        assert_eq!(st.step_count(), 0);
    }
}
