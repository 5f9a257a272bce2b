use serde::{Deserialize, Serialize};

use crate::{Gradients, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Adaptive first/second-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update; returns the pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> f64 {
        let norm = grads.global_norm();
        let clip = match self.config.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (id, g) in grads.iter() {
            let p = params.get_mut(id).data_mut();
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i] * clip;
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let x = store
            .insert("x", Tensor::row_vector(vec![3.0, -2.0]))
            .unwrap();
        let mut opt = Adam::new(
            &store,
            AdamConfig {
                lr: 0.1,
                clip_norm: None,
                ..AdamConfig::default()
            },
        );
        for _ in 0..500 {
            let grads = {
                let mut tape = Tape::new(&store);
                let xv = tape.param(x);
                let loss = tape.sq_norm(xv);
                tape.backward(loss)
            };
            opt.step(&mut store, &grads);
        }
        assert!(store.get(x).sq_norm() < 1e-4);
    }

    #[test]
    fn clipping_bounds_the_first_step() {
        let mut store = ParamStore::new();
        let x = store.insert("x", Tensor::scalar(0.0)).unwrap();
        let mut opt = Adam::new(&store, AdamConfig { lr: 1.0, ..AdamConfig::default() });
        let mut g = Gradients::new(1);
        g.accumulate(x, &Tensor::scalar(100.0));
        let norm = opt.step(&mut store, &g);
        assert_eq!(norm, 100.0);
        // bias-corrected first Adam step has magnitude lr regardless of scale
        assert!((store.get(x).item() + 1.0).abs() < 1e-6);
    }
}
