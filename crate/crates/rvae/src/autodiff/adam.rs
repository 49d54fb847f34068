//! Adam optimizer with bias correction.

use super::Tensor;

/// Step size and decay settings.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Training defaults: alpha 1e-3, betas (0.9, 0.999), eps 1e-8.
    pub fn training() -> Self {
        AdamConfig { alpha: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Test-time E-step defaults: alpha 1e-2.
    pub fn estep() -> Self {
        AdamConfig { alpha: 1e-2, ..Self::training() }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    /// Moments shaped after `params`, in the same order used for `step`.
    pub fn new(cfg: AdamConfig, params: &[&Tensor]) -> Self {
        AdamState {
            cfg,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: `p -= alpha * m_hat / (sqrt(v_hat) + eps)`.
    ///
    /// `params` and `grads` must match the construction order; shapes are
    /// checked by length.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.m.len(), "adam: parameter count changed");
        assert_eq!(params.len(), grads.len(), "adam: gradient count mismatch");
        self.t += 1;
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.numel(), g.len(), "adam: shape mismatch");
            let data = p.data_mut();
            for i in 0..g.len() {
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g[i];
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / b1t;
                let v_hat = v[i] / b2t;
                data[i] -= self.cfg.alpha * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
    }
}

/// Scale `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}
