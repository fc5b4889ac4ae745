//! Per-frame binary cross entropy and its class-weighted and focal variants.

use serde::{Deserialize, Serialize};

use super::config::LossVariant;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    /// Focusing exponent of the focal variants.
    pub gamma: f64,
    /// `(w_0, w_1)`: background and target class weights.
    pub class_weights: (f64, f64),
}

impl LossConfig {
    /// Builds a loss; weighted variants derive `w_k = n / (2 n_k)` from the
    /// training frame counts, the others use unit weights.
    pub fn new(variant: LossVariant, gamma: f64, pos_frames: usize, neg_frames: usize) -> Self {
        let class_weights = if variant.is_weighted() {
            balanced_weights(pos_frames, neg_frames)
        } else {
            (1.0, 1.0)
        };
        Self {
            variant,
            gamma,
            class_weights,
        }
    }

    pub fn bce() -> Self {
        Self::new(LossVariant::Bce, 2.0, 1, 1)
    }

    /// Loss of one frame with predicted probability `p` and label `y`.
    pub fn frame_loss(&self, p: f64, y: u8) -> f64 {
        let p = p.clamp(EPS, 1.0 - EPS);
        let (w0, w1) = self.class_weights;
        let focal = self.variant.is_focal();
        if y == 1 {
            let m = if focal { (1.0 - p).powf(self.gamma) } else { 1.0 };
            -w1 * m * p.ln()
        } else {
            let m = if focal { p.powf(self.gamma) } else { 1.0 };
            -w0 * m * (1.0 - p).ln()
        }
    }

    /// d(frame_loss)/d(logit) where `p = sigmoid(logit)`.
    pub fn frame_grad_logit(&self, p: f64, y: u8) -> f64 {
        if !(EPS..=1.0 - EPS).contains(&p) {
            return 0.0;
        }
        let (w0, w1) = self.class_weights;
        let g = self.gamma;
        let dp = if y == 1 {
            if self.variant.is_focal() {
                let q = 1.0 - p;
                let pow_term = if g == 0.0 { 0.0 } else { g * q.powf(g - 1.0) * p.ln() };
                w1 * (pow_term - q.powf(g) / p)
            } else {
                -w1 / p
            }
        } else if self.variant.is_focal() {
            let pow_term = if g == 0.0 { 0.0 } else { -g * p.powf(g - 1.0) * (1.0 - p).ln() };
            w0 * (pow_term + p.powf(g) / (1.0 - p))
        } else {
            w0 / (1.0 - p)
        };
        dp * p * (1.0 - p)
    }
}

/// `w_k = n / (|K| * n_k)` with `|K| = 2`; a class with no frames gets weight 1.
pub fn balanced_weights(pos_frames: usize, neg_frames: usize) -> (f64, f64) {
    let n = (pos_frames + neg_frames) as f64;
    let w = |k: usize| if k == 0 { 1.0 } else { n / (2.0 * k as f64) };
    (w(neg_frames), w(pos_frames))
}
