use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::diffcore::{GradientMap, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(format!(
                "Adam betas must be in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            ));
        }
        if !(self.eps > 0.0) {
            return Err(format!("Adam eps must be positive, got {}", self.eps));
        }
        Ok(())
    }
}

/// First and second moments per tensor, in parameter-set order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update. Tensors absent from `grads` (frozen ones)
/// are left untouched.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &GradientMap,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if state.m.len() != params.len() {
        return Err(TrainError::Config(format!(
            "optimizer state tracks {} tensors, parameter set has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let Some(g) = grads.get(&p.name) else {
            continue;
        };
        if g.len() != p.values.len() {
            return Err(TrainError::Config(format!(
                "{}: gradient has {} values, parameter has {}",
                p.name,
                g.len(),
                p.values.len()
            )));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..g.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p.values[j] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{ParamTensor, Tape};

    fn scalar_param(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.push(ParamTensor::new("theta", vec![1], vec![v]).unwrap()).unwrap();
        ps
    }

    /// Gradient map for `loss = g·θ`, i.e. constant gradient `g`.
    fn linear_grad(ps: &ParamSet, g: f64) -> GradientMap {
        let mut tape = Tape::<f64>::new();
        let th = tape.param(ps.get("theta").unwrap()).unwrap();
        let s = tape.scale(th, g).unwrap();
        let loss = tape.sum(s).unwrap();
        tape.backward(loss).unwrap()
    }

    #[test]
    fn first_step_by_hand() {
        let mut ps = scalar_param(1.0);
        let grads = linear_grad(&ps, 0.5);
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &grads, &mut st, 0.1, &AdamConfig::default()).unwrap();
        let want = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8));
        assert!((ps.get("theta").unwrap().values[0] - want).abs() < 1e-15);
        assert!((want - 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = scalar_param(2.5);
        let grads = linear_grad(&ps, 0.0);
        let mut st = AdamState::new(&ps);
        for _ in 0..3 {
            adam_step(&mut ps, &grads, &mut st, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(ps.get("theta").unwrap().values[0], 2.5);
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut ps = scalar_param(0.3);
            let mut st = AdamState::new(&ps);
            let mut trail = Vec::new();
            for k in 0..20 {
                // Gradient of θ² plus a varying offset.
                let th = ps.get("theta").unwrap().values[0];
                let grads = linear_grad(&ps, 2.0 * th + (k as f64).sin());
                adam_step(&mut ps, &grads, &mut st, 0.01, &AdamConfig::default()).unwrap();
                trail.push(ps.get("theta").unwrap().values[0].to_bits());
            }
            trail
        };
        assert_eq!(run(), run());
    }
}
