use super::{TrialScore, TrialScoreSet};
use crate::error::{Error, Result};

/// Per-system weights and the logistic bias they were fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub max_iter: usize,
    /// Stop once the log-likelihood gradient norm falls below this.
    pub tol: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { max_iter: 200_000, tol: 1e-6 }
    }
}

fn check_aligned(systems: &[TrialScoreSet]) -> Result<()> {
    let first = systems.first().ok_or_else(|| Error::TrialMismatch("no systems".into()))?;
    for (i, s) in systems.iter().enumerate().skip(1) {
        if !first.aligned_with(s) {
            return Err(Error::TrialMismatch(format!("system {i} lists different trials than system 0")));
        }
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression of the labels on the per-system scores, fitted by
/// full-batch gradient ascent on the mean log-likelihood.
pub fn fit_fusion(dev: &[TrialScoreSet], cfg: &FusionConfig) -> Result<FusionModel> {
    check_aligned(dev)?;
    let labels: Vec<bool> = dev[0].labeled()?.into_iter().map(|(_, l)| l).collect();
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::DegenerateLabels);
    }
    let n = labels.len();
    let m = dev.len();
    // design rows: [1, s_1 .. s_m]
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| std::iter::once(1.0).chain(dev.iter().map(|s| s.records[i].score)).collect())
        .collect();
    let step = 1.0 / lipschitz_bound(&x, m + 1);
    let mut theta = vec![0.0; m + 1];
    let mut grad = vec![0.0; m + 1];
    for _ in 0..cfg.max_iter {
        grad.fill(0.0);
        for (row, &y) in x.iter().zip(&labels) {
            let z: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
            let r = if y { 1.0 } else { 0.0 } - sigmoid(z);
            for (g, a) in grad.iter_mut().zip(row) {
                *g += r * a / n as f64;
            }
        }
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < cfg.tol {
            break;
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t += step * g;
        }
    }
    Ok(FusionModel { bias: theta[0], weights: theta[1..].to_vec() })
}

/// Upper bound on the curvature of the mean log-likelihood:
/// a quarter of the top eigenvalue of `X^T X / n`, by power iteration.
fn lipschitz_bound(x: &[Vec<f64>], d: usize) -> f64 {
    let n = x.len() as f64;
    let mut gram = vec![vec![0.0; d]; d];
    for row in x {
        for i in 0..d {
            for j in 0..d {
                gram[i][j] += row[i] * row[j] / n;
            }
        }
    }
    let mut v = vec![1.0; d];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let w: Vec<f64> = gram.iter().map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm / v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v = w.iter().map(|a| a / norm).collect();
    }
    // power iteration approaches from below; pad it
    (0.25 * lambda * 1.01).max(1e-12)
}

/// Normalized weighted average of the systems' scores; the bias is dropped
/// since it does not change the trial ranking.
pub fn fuse(systems: &[TrialScoreSet], model: &FusionModel) -> Result<TrialScoreSet> {
    check_aligned(systems)?;
    if model.weights.len() != systems.len() {
        return Err(Error::TrialMismatch(format!(
            "{} weights for {} systems",
            model.weights.len(),
            systems.len()
        )));
    }
    let total: f64 = model.weights.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroTotalWeight);
    }
    let records = (0..systems[0].len())
        .map(|i| {
            let first = &systems[0].records[i];
            let score = systems.iter().zip(&model.weights).map(|(s, w)| w * s.records[i].score).sum::<f64>() / total;
            TrialScore { enroll: first.enroll.clone(), test: first.test.clone(), score, label: first.label }
        })
        .collect();
    Ok(TrialScoreSet { records })
}
