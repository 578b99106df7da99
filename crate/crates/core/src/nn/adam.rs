use serde::{Deserialize, Serialize};

use super::model::Params;
use super::tensor::Scalar;
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, kept in f64 for every tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Scalar>(params: &Params<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update of every trainable tensor.
pub fn adam_step<T: Scalar>(
    cfg: &AdamConfig,
    state: &mut AdamState,
    params: &mut Params<T>,
    grads: &[Vec<T>],
    lr: f64,
) -> Result<(), ModelError> {
    let shapes_ok = grads.len() == params.tensors.len()
        && state.m.len() == grads.len()
        && params
            .tensors
            .iter()
            .zip(grads)
            .zip(&state.m)
            .all(|((p, g), m)| p.data.len() == g.len() && m.len() == g.len());
    if !shapes_ok {
        return Err(ModelError::ParamMismatch("gradient / optimizer state shape mismatch".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
        if !p.trainable {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..g.len() {
            let gj = g[j].f64();
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.eps);
            p.data[j] = T::of(p.data[j].f64() - update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::Tensor;

    fn params(v: Vec<f64>) -> Params<f64> {
        Params {
            tensors: vec![Tensor {
                name: "w".into(),
                shape: vec![v.len()],
                data: v,
                trainable: true,
            }],
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = params(vec![1.0, -2.0]);
        let mut s = AdamState::new(&p);
        adam_step(&AdamConfig::default(), &mut s, &mut p, &[vec![0.0, 0.0]], 1e-3).unwrap();
        assert_eq!(p.tensors[0].data, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut p = params(vec![0.0, 0.0]);
        let mut s = AdamState::new(&p);
        let lr = 1e-3;
        let mut prev = p.tensors[0].data.clone();
        for k in 0..2000 {
            adam_step(&AdamConfig::default(), &mut s, &mut p, &[vec![0.3, -7.0]], lr).unwrap();
            let now = &p.tensors[0].data;
            let steps = [prev[0] - now[0], prev[1] - now[1]];
            if k == 0 || k == 1999 {
                assert!((steps[0] - lr).abs() < 1e-6 * lr * 100.0, "{steps:?}");
                assert!((steps[1] + lr).abs() < 1e-6 * lr * 100.0, "{steps:?}");
            }
            prev = now.clone();
        }
    }

    #[test]
    fn frozen_tensors_untouched_and_shapes_checked() {
        let mut p = params(vec![1.0]);
        p.tensors[0].trainable = false;
        let mut s = AdamState::new(&p);
        adam_step(&AdamConfig::default(), &mut s, &mut p, &[vec![5.0]], 1.0).unwrap();
        assert_eq!(p.tensors[0].data, vec![1.0]);
        assert!(adam_step(&AdamConfig::default(), &mut s, &mut p, &[vec![5.0, 1.0]], 1.0).is_err());
    }
}
