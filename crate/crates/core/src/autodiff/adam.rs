use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators and step counter for one parameter
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.v.len() != state.m.len()
    {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), state.m.len()],
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3, -0.7];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::new(0.1, 0.9, 0.999)).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for g in [3.0, -0.25] {
            let mut p = vec![1.0];
            let mut s = AdamState::new(1);
            adam_step(&mut p, &[g], &mut s, &AdamConfig::new(0.01, 0.9, 0.999)).unwrap();
            let moved = p[0] - 1.0;
            assert!((moved + 0.01 * f64::signum(g)).abs() < 1e-8, "{moved}");
        }
    }

    #[test]
    fn quadratic_descent_is_monotone() {
        // Reference simulation of Adam on f(w) = w² from w = 1, lr = 0.1.
        let mut w = vec![1.0];
        let mut s = AdamState::new(1);
        let cfg = AdamConfig::new(0.1, 0.9, 0.999);
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = [2.0 * w[0]];
            adam_step(&mut w, &g, &mut s, &cfg).unwrap();
            assert!(w[0].abs() < prev, "{} !< {prev}", w[0].abs());
            prev = w[0].abs();
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(3);
        assert!(adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::new(0.1, 0.9, 0.999)).is_err());
    }
}
