use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, Mlp};

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp) -> Self {
        let zeros: Vec<Vec<f64>> = net.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected Adam descent step on `net` along `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients, lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in net.tensors_mut().zip(grads.tensors()).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuro::mlp::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        Mlp::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, 0.5, &mut rng)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut n = net();
        let before = n.clone();
        let mut opt = Adam::new(&n);
        let g = Gradients::zeros_like(&n);
        opt.step(&mut n, &g, 1e-2);
        assert_eq!(n, before);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut n = net();
        let before = n.clone();
        let mut opt = Adam::new(&n);
        let (g, _) = n.gradients(&[1.0, 2.0, 3.0], &[1.0, -1.0]).unwrap();
        opt.step(&mut n, &g, 0.0);
        assert_eq!(n, before);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        // With a constant gradient g the bias-corrected moments equal g and
        // g^2, so every step moves each parameter by lr * |g| / (|g| + eps).
        let mut n = net();
        let mut opt = Adam::new(&n);
        let mut g = Gradients::zeros_like(&n);
        for l in &mut g.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.37);
            l.biases.iter_mut().for_each(|b| *b = -2.5);
        }
        let lr = 1e-3;
        let mut last = n.clone();
        for _ in 0..2000 {
            opt.step(&mut n, &g, lr);
            for (after, before) in n.tensors().zip(last.tensors()) {
                for (a, b) in after.iter().zip(before) {
                    assert!(((a - b).abs() - lr).abs() < 1e-9);
                }
            }
            last = n.clone();
        }
    }
}
