use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dims("adam parameters", self.m.len(), params.len()));
        }
        if grad.len() != self.m.len() {
            return Err(Error::dims("adam gradient", self.m.len(), grad.len()));
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("adam gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_signed_lr() {
        let mut s = AdamState::new(3, 0.1);
        let mut p = vec![1.0, 1.0, 1.0];
        let g = [2.0, -0.5, 1e-3];
        s.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = 1.0 - 0.1 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(2, 0.1);
        let mut p = vec![0.3, -4.0];
        s.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.3, -4.0]);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut s = AdamState::new(1, 0.05);
        let mut w = vec![0.0];
        for _ in 0..2000 {
            let g = [2.0 * (w[0] - 3.0)];
            s.step(&mut w, &g).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 1e-3, "w = {}", w[0]);
    }

    #[test]
    fn rejects_non_finite_and_mismatched() {
        let mut s = AdamState::new(1, 0.1);
        let mut p = vec![0.0];
        assert!(s.step(&mut p, &[f64::NAN]).is_err());
        assert!(s.step(&mut p, &[1.0, 2.0]).is_err());
        assert_eq!(s.step, 0);
    }
}
