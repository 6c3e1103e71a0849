//! Adaptive moment estimation with lazily updated, per-slot feature moments.
//!
//! Feature slots only move when they received a gradient in the current step;
//! each slot keeps its own step count for bias correction.

use crate::field::FeatureField;
use crate::trainer::objective::SparseGrad;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr_features: f64,
    pub lr_mlp: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_features: 1e-2,
            lr_mlp: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    feat_m: Vec<f64>,
    feat_v: Vec<f64>,
    feat_steps: Vec<u32>,
    mlp_m: Vec<f64>,
    mlp_v: Vec<f64>,
    mlp_steps: u32,
}

impl OptimizerState {
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    fn ensure(&mut self, slots: usize, feature_len: usize) {
        if self.feat_steps.len() < slots {
            self.feat_steps.resize(slots, 0);
            self.feat_m.resize(slots * feature_len, 0.0);
            self.feat_v.resize(slots * feature_len, 0.0);
        }
    }

    pub fn step_features(&mut self, field: &mut FeatureField, grad: &SparseGrad, cfg: &AdamConfig) {
        let l = field.feature_len();
        self.ensure(field.slot_count(), l);
        let params = field.features_mut();
        for (slot, g) in grad.iter() {
            let s = slot as usize;
            self.feat_steps[s] += 1;
            let t = self.feat_steps[s] as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            for (j, gj) in g.iter().enumerate() {
                let i = s * l + j;
                adam_update(
                    &mut params[i],
                    &mut self.feat_m[i],
                    &mut self.feat_v[i],
                    *gj,
                    c1,
                    c2,
                    cfg.lr_features,
                    cfg,
                );
            }
        }
    }

    pub fn step_mlp(&mut self, params: &mut [f64], grad: &[f64], cfg: &AdamConfig) {
        if self.mlp_m.len() != params.len() {
            self.mlp_m = vec![0.0; params.len()];
            self.mlp_v = vec![0.0; params.len()];
            self.mlp_steps = 0;
        }
        self.mlp_steps += 1;
        let t = self.mlp_steps as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (i, g) in grad.iter().enumerate() {
            adam_update(&mut params[i], &mut self.mlp_m[i], &mut self.mlp_v[i], *g, c1, c2, cfg.lr_mlp, cfg);
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn adam_update(p: &mut f64, m: &mut f64, v: &mut f64, g: f64, c1: f64, c2: f64, lr: f64, cfg: &AdamConfig) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let m_hat = *m / c1;
    let v_hat = *v / c2;
    *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
}
