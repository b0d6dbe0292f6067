use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BceOutput {
    pub loss: f64,
    /// d loss / d logit
    pub dlogit: f64,
}

/// Binary cross-entropy of a sigmoid output against a 0/1 label.
///
/// The probability is clamped to `[1e-7, 1 - 1e-7]` inside the logarithms
/// only; the logit gradient is the unclamped `p_hat - y`.
pub fn bce_loss(label: f64, p_hat: f64) -> Result<BceOutput> {
    if label != 0.0 && label != 1.0 {
        return Err(Error::Data(format!("label must be 0 or 1, got {label}")));
    }
    let p = p_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = -label * p.ln() - (1.0 - label) * (1.0 - p).ln();
    Ok(BceOutput {
        loss,
        dlogit: p_hat - label,
    })
}

pub fn bce_with_logit(label: f64, logit: f64) -> Result<BceOutput> {
    bce_loss(label, sigmoid(logit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_values() {
        let out = bce_loss(0.0, 0.5).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(out.dlogit, 0.5);
        let near_one = bce_loss(1.0, 1.0 - 1e-7).unwrap();
        assert!(near_one.loss < 1.1e-7 && near_one.loss > 0.0);
    }

    #[test]
    fn clamp_keeps_loss_finite() {
        assert!(bce_loss(1.0, 0.0).unwrap().loss.is_finite());
        assert!(bce_loss(0.0, 1.0).unwrap().loss.is_finite());
    }

    #[test]
    fn bad_label_is_data_error() {
        assert!(matches!(bce_loss(0.5, 0.3), Err(Error::Data(_))));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }
}
