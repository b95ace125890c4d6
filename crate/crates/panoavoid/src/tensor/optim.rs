//! AdamW with decoupled weight decay, plus the cosine learning-rate schedule.

use std::rc::Rc;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First/second moment state for one flat parameter list.
pub struct AdamW<S> {
    cfg: AdamWConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: u32,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(cfg: AdamWConfig, sizes: &[usize]) -> Self {
        AdamW {
            cfg,
            m: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![S::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u32 {
        self.t
    }

    /// One update over all parameter tensors. Weight decay is decoupled: it
    /// scales the parameter directly by lr * wd instead of entering the
    /// moment estimates.
    pub fn step(&mut self, params: &mut [Rc<Vec<S>>], grads: &[Vec<S>], lr: S) {
        assert_eq!(params.len(), self.m.len(), "adamw: expected {} parameter tensors, got {}", self.m.len(), params.len());
        assert_eq!(grads.len(), self.m.len(), "adamw: expected {} gradient tensors, got {}", self.m.len(), grads.len());
        self.t += 1;
        let b1 = S::c(self.cfg.beta1);
        let b2 = S::c(self.cfg.beta2);
        let eps = S::c(self.cfg.eps);
        let wd = S::c(self.cfg.weight_decay);
        let bc1 = S::one() - S::c(self.cfg.beta1.powi(self.t as i32));
        let bc2 = S::one() - S::c(self.cfg.beta2.powi(self.t as i32));
        let one = S::one();

        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            assert_eq!(p.len(), g.len(), "adamw: parameter/gradient length mismatch {} vs {}", p.len(), g.len());
            let pd = Rc::make_mut(p);
            for i in 0..pd.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                pd[i] = pd[i] - lr * (mhat / (vhat.sqrt() + eps) + wd * pd[i]);
            }
        }
    }
}

/// Cosine decay from `lr0` down to a floor of 1% of `lr0`.
pub fn cosine_lr(step: u32, total: u32, lr0: f64) -> f64 {
    assert!(total > 0, "cosine_lr: total steps must be positive");
    let floor = 0.01 * lr0;
    let s = (step.min(total)) as f64 / total as f64;
    floor + 0.5 * (lr0 - floor) * (1.0 + (std::f64::consts::PI * s).cos())
}
