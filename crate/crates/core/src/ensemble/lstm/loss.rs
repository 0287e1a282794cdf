//! Focal loss `-a_t (1 - p_t)^gamma ln p_t` with `p_t = p` for positives and
//! `1 - p` for negatives, `a_t = alpha` or `1 - alpha` likewise.

use crate::error::{Error, Result};

pub const P_CLAMP: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

pub fn focal_loss_single(p: f64, y: bool, gamma: f64, alpha: f64) -> f64 {
    let p = clamp(p);
    let (pt, at) = if y { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

/// Mean focal loss.
pub fn focal_loss(p: &[f64], y: &[bool], gamma: f64, alpha: f64) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::LengthMismatch {
            what: "focal loss probabilities vs labels",
            left: p.len(),
            right: y.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::invalid("focal loss over zero elements"));
    }
    let sum: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| focal_loss_single(p, y, gamma, alpha))
        .sum();
    Ok(sum / p.len() as f64)
}

/// Derivative of the per-element loss with respect to the logit `z`,
/// `p = sigmoid(z)`. Zero where the clamp is active.
pub fn focal_grad_logit(p: f64, y: bool, gamma: f64, alpha: f64) -> f64 {
    if !(P_CLAMP..=1.0 - P_CLAMP).contains(&p) {
        return 0.0;
    }
    let (pt, at, sign) = if y { (p, alpha, 1.0) } else { (1.0 - p, 1.0 - alpha, -1.0) };
    let q = 1.0 - pt;
    sign * at * (gamma * q.powf(gamma) * pt * pt.ln() - q.powf(gamma + 1.0))
}
