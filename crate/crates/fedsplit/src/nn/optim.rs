//! Optimizers. Adam with the canonical bias-corrected update is the default
//! (the only hyperparameter the experiments fix is lr = 0.001); plain SGD is
//! selectable for ablation.

use serde::{Deserialize, Serialize};

use super::network::Network;
use super::NnError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adam state: one (m, v) moment pair per parameter tensor plus the shared
/// step counter. Moments are allocated lazily on the first step.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    t: u64,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        assert!(lr >= 0.0, "learning rate must be non-negative");
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }

    /// Completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update over a parameter list. The list must keep
    /// the same arity and shapes across calls.
    pub fn step_params(
        &mut self,
        params_and_grads: &mut [(&mut Tensor, &Tensor)],
    ) -> Result<(), NnError> {
        if self.moments.is_empty() {
            self.moments = params_and_grads
                .iter()
                .map(|(p, _)| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
                .collect();
        }
        if self.moments.len() != params_and_grads.len() {
            return Err(NnError::ParamMismatch(format!(
                "optimizer tracks {} tensors, got {}",
                self.moments.len(),
                params_and_grads.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in params_and_grads.iter_mut().zip(&mut self.moments) {
            if param.shape() != grad.shape() || param.numel() != m.len() {
                return Err(NnError::ParamMismatch(format!(
                    "param {:?} vs grad {:?} vs moment {}",
                    param.shape(),
                    grad.shape(),
                    m.len()
                )));
            }
            let p = param.data_mut();
            let g = grad.data();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Optimizer over a whole network's (weight, bias) list in layer order.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(Adam),
    Sgd { lr: f32 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f32) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    /// Applies one update from the gradients accumulated in the network.
    pub fn step(&mut self, net: &mut Network) -> Result<(), NnError> {
        let mut pairs = net.params_and_grads();
        match self {
            Optimizer::Adam(adam) => adam.step_params(&mut pairs),
            Optimizer::Sgd { lr } => {
                for (param, grad) in pairs.iter_mut() {
                    let p = param.data_mut();
                    for (pv, gv) in p.iter_mut().zip(grad.data()) {
                        *pv -= *lr * gv;
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_pair(p: f32) -> (Tensor, Tensor) {
        (Tensor::from_vec(vec![p]), Tensor::from_vec(vec![0.0]))
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut p, mut g) = scalar_pair(1.0);
        g.data_mut()[0] = 0.5; // |g| >> epsilon
        let mut adam = Adam::new(0.001);
        adam.step_params(&mut [(&mut p, &g)]).unwrap();
        assert!((p.data()[0] - (1.0 - 0.001)).abs() < 1e-6);

        let (mut p, mut g) = scalar_pair(1.0);
        g.data_mut()[0] = -3.0;
        let mut adam = Adam::new(0.001);
        adam.step_params(&mut [(&mut p, &g)]).unwrap();
        assert!((p.data()[0] - (1.0 + 0.001)).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_params_and_advances_t() {
        let (mut p, g) = scalar_pair(1.25);
        let mut adam = Adam::new(0.01);
        adam.step_params(&mut [(&mut p, &g)]).unwrap();
        assert_eq!(p.data()[0], 1.25);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn two_steps_match_hand_rolled_recurrence() {
        // scalar recurrence evaluated by hand in f32
        let lr = 0.1f32;
        let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
        let g = 0.3f32;
        let mut p_ref = 2.0f32;
        let (mut m, mut v) = (0.0f32, 0.0f32);
        for t in 1..=2u32 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            p_ref -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut p = Tensor::from_vec(vec![2.0]);
        let grad = Tensor::from_vec(vec![g]);
        let mut adam = Adam::new(lr);
        adam.step_params(&mut [(&mut p, &grad)]).unwrap();
        adam.step_params(&mut [(&mut p, &grad)]).unwrap();
        assert_eq!(p.data()[0], p_ref);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::from_vec(vec![1.0, 2.0]);
        let g = Tensor::from_vec(vec![0.1]);
        let mut adam = Adam::new(0.01);
        assert!(adam.step_params(&mut [(&mut p, &g)]).is_err());
    }

    #[test]
    fn sgd_applies_plain_update() {
        let mut net = Network::new(vec![]);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5);
        opt.step(&mut net).unwrap(); // no params, no-op
    }
}
