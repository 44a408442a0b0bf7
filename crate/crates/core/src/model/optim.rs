//! AdamW with decoupled weight decay and global-norm gradient clipping.

use super::scalar::Scalar;
use super::transformer::Params;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    m: Params<T>,
    v: Params<T>,
    step: u64,
}

/// Biases and LayerNorm parameters are not decayed.
fn decays(name: &str, shape: &[usize]) -> bool {
    shape.len() == 2 && !name.contains("ln")
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, like: &Params<T>) -> Self {
        let mut m = like.clone();
        m.fill_zero();
        AdamW {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update:
    /// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
    /// `θ ← θ − lr·(m̂/(√v̂ + ε) + λ·θ)` with bias-corrected `m̂`, `v̂`.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.epsilon);
        let wd = T::lit(c.weight_decay);
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            let decay = decays(&p.name, &p.shape);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (one - b1) * gi;
                v.data[i] = b2 * v.data[i] + (one - b2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                let mut update = mhat / (vhat.sqrt() + eps);
                if decay {
                    update += wd * p.data[i];
                }
                p.data[i] -= lr * update;
            }
        }
    }
}

/// Global L2 norm of all gradients.
pub fn global_norm<T: Scalar>(grads: &Params<T>) -> f64 {
    grads
        .tensors
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|x| {
            let x = x.to_f64().unwrap();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Params<T>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let scale = T::lit(max_norm / norm);
        for t in &mut grads.tensors {
            t.data.iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;

    fn cfg() -> ModelConfig {
        ModelConfig {
            layers: 1,
            heads: 1,
            embed_dim: 2,
            ffn_dim: 2,
            max_seq_len: 2,
            dropout: 0.0,
            vocab_size: 3,
        }
    }

    #[test]
    fn first_step_matches_closed_form() {
        // After one step m̂ = g and v̂ = g², so the update is lr·(sign(g)·|g|/(|g|+ε) + λθ).
        let mut params = Params::<f64>::init(&cfg(), 1);
        let before = params.clone();
        let mut grads = params.clone();
        for (i, x) in grads.tensors.iter_mut().flat_map(|t| t.data.iter_mut()).enumerate() {
            *x = (i as f64 * 0.7).sin();
        }
        let c = AdamWConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.5,
        };
        let mut opt = AdamW::new(c, &params);
        opt.step(&mut params, &grads);
        for ((p, b), g) in params.tensors.iter().zip(&before.tensors).zip(&grads.tensors) {
            let decay = decays(&p.name, &p.shape);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                let mut want = gi / (gi.abs() + 1e-8);
                if decay {
                    want += 0.5 * b.data[i];
                }
                let got = (b.data[i] - p.data[i]) / 0.1;
                assert!((got - want).abs() < 1e-9, "{}[{i}]: {got} vs {want}", p.name);
            }
        }
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = Params::<f64>::init(&cfg(), 2);
        for t in &mut g.tensors {
            t.data.iter_mut().for_each(|x| *x = 3.0);
        }
        let before = clip_global_norm(&mut g, 1.0);
        assert!(before > 1.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let again = clip_global_norm(&mut g, 5.0);
        assert!((again - 1.0).abs() < 1e-12);
    }
}
