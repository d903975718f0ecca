//! Scalar loss terms with their derivatives.

use crate::math::sigmoid;
#[allow(unused_imports)]
use crate::math::Float;

/// Focal weighting of positives.
pub const FOCAL_ALPHA: f64 = 0.25;
/// Focal modulating exponent.
pub const FOCAL_GAMMA: f64 = 2.0;
/// Probability clamp applied before logarithms.
pub const PROB_EPS: f64 = 1e-7;
/// Smooth-L1 transition point.
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Focal {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for Focal {
    fn default() -> Self {
        Focal {
            alpha: FOCAL_ALPHA,
            gamma: FOCAL_GAMMA,
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

impl Focal {
    /// `-alpha (1-p)^gamma ln p` and its derivative in `p`.
    pub fn positive_prob(&self, p: f64) -> (f64, f64) {
        let p = clamp_prob(p);
        let q = 1.0 - p;
        let v = -self.alpha * q.powf(self.gamma) * p.ln();
        let mut d = -self.alpha * q.powf(self.gamma) / p;
        if self.gamma != 0.0 {
            d += self.alpha * self.gamma * q.powf(self.gamma - 1.0) * p.ln();
        }
        (v, d)
    }

    /// `-(1-alpha) p^gamma ln(1-p)` and its derivative in `p`.
    pub fn negative_prob(&self, p: f64) -> (f64, f64) {
        let p = clamp_prob(p);
        let q = 1.0 - p;
        let a = 1.0 - self.alpha;
        let v = -a * p.powf(self.gamma) * q.ln();
        let mut d = a * p.powf(self.gamma) / q;
        if self.gamma != 0.0 {
            d -= a * self.gamma * p.powf(self.gamma - 1.0) * q.ln();
        }
        (v, d)
    }

    /// Positive term evaluated from a logit, with the derivative in the
    /// logit. Logarithms use the numerically stable softplus form.
    pub fn positive_logit(&self, x: f64) -> (f64, f64) {
        let p = sigmoid(x);
        let q = 1.0 - p;
        let log_p = -softplus(-x);
        let mq = q.powf(self.gamma);
        let v = -self.alpha * mq * log_p;
        let d = self.alpha * mq * (self.gamma * p * log_p - q);
        (v, d)
    }

    /// Negative term evaluated from a logit.
    pub fn negative_logit(&self, x: f64) -> (f64, f64) {
        let p = sigmoid(x);
        let q = 1.0 - p;
        let log_q = -softplus(x);
        let mp = p.powf(self.gamma);
        let a = 1.0 - self.alpha;
        let v = -a * mp * log_q;
        let d = a * mp * (p - self.gamma * q * log_q);
        (v, d)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Smooth-L1 with transition `beta` and its derivative.
pub fn smooth_l1(x: f64, beta: f64) -> (f64, f64) {
    let a = x.abs();
    if a < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (a - 0.5 * beta, x.signum())
    }
}
