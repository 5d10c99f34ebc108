use super::pooling::softmax;

/// Cross-entropy over `s * cos` logits with the target logit replaced by
/// `s * target(cos_label)`; returns the loss and its gradient w.r.t. the cosines.
fn margin_ce(cos: &[f64], label: usize, s: f64, target: f64, d_target: f64) -> (f64, Vec<f64>) {
    assert!(label < cos.len(), "label {label} out of range for {} classes", cos.len());
    let mut z: Vec<f64> = cos.iter().map(|c| s * c).collect();
    z[label] = s * target;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = lse - z[label];
    let mut grad = softmax(&z);
    grad[label] -= 1.0;
    for g in grad.iter_mut() {
        *g *= s;
    }
    grad[label] *= d_target;
    (loss, grad)
}

/// Additive margin softmax: target logit `s * (cos θ - m)`.
pub fn am_softmax_loss(cos: &[f64], label: usize, s: f64, m: f64) -> (f64, Vec<f64>) {
    margin_ce(cos, label, s, cos[label] - m, 1.0)
}

/// Additive angular margin softmax: target logit `s * cos(θ + m)`, with the
/// linear fallback `cos θ - m sin m` once `θ + m` would pass π.
pub fn aam_softmax_loss(cos: &[f64], label: usize, s: f64, m: f64) -> (f64, Vec<f64>) {
    let c = cos[label].clamp(-1.0, 1.0);
    let (cos_m, sin_m) = (m.cos(), m.sin());
    let threshold = (std::f64::consts::PI - m).cos();
    let (target, d_target) = if c > threshold {
        let sin_t = (1.0 - c * c).max(0.0).sqrt();
        let d = if sin_t > 1e-12 { cos_m + sin_m * c / sin_t } else { cos_m };
        (c * cos_m - sin_t * sin_m, d)
    } else {
        (c - m * sin_m, 1.0)
    };
    margin_ce(cos, label, s, target, d_target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginLoss {
    Am,
    Aam,
}

impl MarginLoss {
    pub fn compute(self, cos: &[f64], label: usize, s: f64, m: f64) -> (f64, Vec<f64>) {
        match self {
            MarginLoss::Am => am_softmax_loss(cos, label, s, m),
            MarginLoss::Aam => aam_softmax_loss(cos, label, s, m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn uniform_cosines_give_log_j() {
        let (l, _) = am_softmax_loss(&[0.3; 7], 2, 1.0, 0.0);
        assert!((l - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn am_target_logit() {
        // logits (30 * (1 - 0.2), 30 * 0.5) = (24, 15)
        let (l, _) = am_softmax_loss(&[1.0, 0.5], 0, 30.0, 0.2);
        let expected = (1.0 + (15.0f64 - 24.0).exp()).ln();
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn aam_zero_margin_equals_am() {
        let cos = [0.1, -0.4, 0.8, 0.33];
        assert_eq!(aam_softmax_loss(&cos, 2, 30.0, 0.0), am_softmax_loss(&cos, 2, 30.0, 0.0));
    }

    #[test]
    fn aam_angle_addition() {
        let cos = [(PI / 3.0).cos(), 0.0];
        let (l, _) = aam_softmax_loss(&cos, 0, 10.0, PI / 6.0);
        // both logits are ~0, so the loss is ln 2
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn aam_fallback_region_is_linear() {
        let m = 0.5;
        let c = -0.95; // theta + m > pi
        let (l, g) = aam_softmax_loss(&[c, 0.0], 0, 2.0, m);
        let t = c - m * m.sin();
        let expected = (1.0 + (-2.0 * t).exp()).ln();
        assert!((l - expected).abs() < 1e-12);
        let (_, g_am) = am_softmax_loss(&[c, 0.0], 0, 2.0, m * m.sin());
        assert!((g[0] - g_am[0]).abs() < 1e-12);
    }
}
