//! Adam optimizer with bias correction and optional decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::{DenseNet, Matrix, NumError, ParamGrads};

/// Adam hyperparameters. Defaults are the standard ones; weight decay is
/// decoupled (applied directly to the weights, not through the moments).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

/// First/second moment estimates, one tensor per parameter tensor of the
/// network being optimized, plus the step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    /// Fresh zeroed state shaped like `net`'s parameters.
    pub fn for_net(net: &DenseNet) -> AdamState {
        let m: Vec<Matrix> = net.param_tensors().map(|t| Matrix::zeros(t.raw_dim())).collect();
        let v = m.clone();
        AdamState { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam step in place. Gradients must be finite; a NaN or infinity
    /// anywhere aborts the update with an error naming the offending tensor.
    pub fn update(
        &mut self,
        net: &mut DenseNet,
        grads: &ParamGrads,
        cfg: &AdamConfig,
    ) -> Result<(), NumError> {
        for (idx, g) in DenseNet::grad_tensors(grads).enumerate() {
            if g.iter().any(|x| !x.is_finite()) {
                let layer = idx / 2;
                let kind = if idx % 2 == 0 { "weights" } else { "biases" };
                return Err(NumError::NonFinite {
                    context: format!("layer {layer} {kind} gradient"),
                });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for (((param, grad), m), v) in net
            .param_tensors_mut()
            .zip(DenseNet::grad_tensors(grads))
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            debug_assert_eq!(param.raw_dim(), grad.raw_dim());
            moment_update(param, grad, m, v, cfg, bc1, bc2);
        }
        Ok(())
    }

    /// (moments, step) flattened for checkpointing, matching
    /// [`DenseNet::flat_params`] parameter order.
    pub fn flat(&self) -> (Vec<f64>, Vec<f64>, u64) {
        let m = self.m.iter().flat_map(|t| t.iter().copied()).collect();
        let v = self.v.iter().flat_map(|t| t.iter().copied()).collect();
        (m, v, self.step)
    }

    /// Rebuilds state from flattened moments (inverse of [`Self::flat`]).
    pub fn from_flat(
        net: &DenseNet,
        m_flat: &[f64],
        v_flat: &[f64],
        step: u64,
    ) -> Result<AdamState, NumError> {
        let count = net.param_count();
        if m_flat.len() != count || v_flat.len() != count {
            return Err(NumError::Shape {
                context: "optimizer state restore".into(),
                expected: format!("{count} moment values"),
                got: format!("{} / {}", m_flat.len(), v_flat.len()),
            });
        }
        let mut state = AdamState::for_net(net);
        let mut idx = 0;
        for (m, v) in state.m.iter_mut().zip(state.v.iter_mut()) {
            let n = m.len();
            for (slot, &val) in m.iter_mut().zip(&m_flat[idx..idx + n]) {
                *slot = val;
            }
            for (slot, &val) in v.iter_mut().zip(&v_flat[idx..idx + n]) {
                *slot = val;
            }
            idx += n;
        }
        state.step = step;
        Ok(state)
    }
}

fn moment_update(
    param: &mut Matrix,
    grad: &Matrix,
    m: &mut Matrix,
    v: &mut Matrix,
    cfg: &AdamConfig,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            if cfg.weight_decay > 0.0 {
                *p -= cfg.lr * cfg.weight_decay * *p;
            }
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        });
}
