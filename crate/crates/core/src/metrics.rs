//! Detection-error metrics over labeled trial scores.
//!
//! A trial is accepted when `score >= threshold`, for targets and
//! nontargets alike. The DET sweep visits every distinct score as a
//! threshold, bracketed by the accept-all and reject-all extremes.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetOperatingPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_tar: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self { p_tar: 0.01, c_miss: 1.0, c_fa: 1.0 }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_tar > 0.0 && self.p_tar < 1.0) || !(self.c_miss > 0.0) || !(self.c_fa > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "DCF needs 0 < p_tar < 1 and positive costs, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Cost of the better of the two trivial systems.
    pub fn normalizer(&self) -> f64 {
        (self.p_tar * self.c_miss).min((1.0 - self.p_tar) * self.c_fa)
    }

    pub fn normalized_cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        (self.p_tar * self.c_miss * p_miss + (1.0 - self.p_tar) * self.c_fa * p_fa) / self.normalizer()
    }
}

/// Operating points in increasing threshold order. `trials` holds
/// `(score, is_target)` pairs.
pub fn det_sweep(trials: &[(f64, bool)]) -> Result<Vec<DetOperatingPoint>> {
    let mut tar: Vec<f64> = trials.iter().filter(|t| t.1).map(|t| t.0).collect();
    let mut non: Vec<f64> = trials.iter().filter(|t| !t.1).map(|t| t.0).collect();
    if tar.is_empty() || non.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    if trials.iter().any(|t| !t.0.is_finite()) {
        return Err(Error::InvalidConfig("non-finite score".into()));
    }
    tar.sort_by(f64::total_cmp);
    non.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = trials.iter().map(|t| t.0).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (nt, nn) = (tar.len() as f64, non.len() as f64);
    let mut points = Vec::with_capacity(thresholds.len() + 2);
    points.push(DetOperatingPoint { threshold: f64::NEG_INFINITY, p_miss: 0.0, p_fa: 1.0 });
    for &th in &thresholds {
        let misses = tar.partition_point(|&s| s < th);
        let false_alarms = non.len() - non.partition_point(|&s| s < th);
        points.push(DetOperatingPoint {
            threshold: th,
            p_miss: misses as f64 / nt,
            p_fa: false_alarms as f64 / nn,
        });
    }
    points.push(DetOperatingPoint { threshold: f64::INFINITY, p_miss: 1.0, p_fa: 0.0 });
    Ok(points)
}

/// Equal error rate by linear interpolation across the first sign change
/// of `p_miss - p_fa`. Returns `(eer, threshold)`.
pub fn eer(trials: &[(f64, bool)]) -> Result<(f64, f64)> {
    Ok(eer_from_points(&det_sweep(trials)?))
}

pub fn eer_from_points(points: &[DetOperatingPoint]) -> (f64, f64) {
    let i = points
        .iter()
        .position(|p| p.p_miss - p.p_fa >= 0.0)
        .expect("the reject-all point always has p_miss >= p_fa");
    let cur = points[i];
    let d_cur = cur.p_miss - cur.p_fa;
    if d_cur == 0.0 || i == 0 {
        return (cur.p_miss, finite_threshold(points, i));
    }
    let prev = points[i - 1];
    let d_prev = prev.p_miss - prev.p_fa;
    let alpha = -d_prev / (d_cur - d_prev);
    let rate = prev.p_miss + alpha * (cur.p_miss - prev.p_miss);
    let threshold = match (prev.threshold.is_finite(), cur.threshold.is_finite()) {
        (true, true) => prev.threshold + alpha * (cur.threshold - prev.threshold),
        (true, false) => prev.threshold,
        _ => finite_threshold(points, i),
    };
    (rate, threshold)
}

fn finite_threshold(points: &[DetOperatingPoint], i: usize) -> f64 {
    let t = points[i].threshold;
    if t.is_finite() {
        t
    } else if t < 0.0 {
        points[1].threshold
    } else {
        points[points.len() - 2].threshold
    }
}

/// Minimum normalized detection cost over the sweep. Returns
/// `(min_dcf, threshold)`; the threshold is infinite when a trivial
/// system is best.
pub fn min_dcf(trials: &[(f64, bool)], params: &DcfParams) -> Result<(f64, f64)> {
    params.validate()?;
    Ok(min_dcf_from_points(&det_sweep(trials)?, params))
}

pub fn min_dcf_from_points(points: &[DetOperatingPoint], params: &DcfParams) -> (f64, f64) {
    let mut best = (f64::INFINITY, f64::NAN);
    for p in points {
        let c = params.normalized_cost(p.p_miss, p.p_fa);
        if c < best.0 {
            best = (c, p.threshold);
        }
    }
    best
}

/// `threshold,p_miss,p_fa` rows with a header line.
pub fn write_det_csv<W: Write>(mut w: W, points: &[DetOperatingPoint]) -> std::io::Result<()> {
    writeln!(w, "threshold,p_miss,p_fa")?;
    for p in points {
        writeln!(w, "{},{},{}", p.threshold, p.p_miss, p.p_fa)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(p: &DetOperatingPoint) -> (f64, f64) {
        (p.p_miss, p.p_fa)
    }

    #[test]
    fn two_trial_sweep() {
        let pts = det_sweep(&[(0.9, true), (0.1, false)]).unwrap();
        let ops: Vec<_> = pts.iter().map(op).collect();
        assert_eq!(ops, [(0.0, 1.0), (0.0, 1.0), (0.0, 0.0), (1.0, 0.0)]);
        assert_eq!(eer(&[(0.9, true), (0.1, false)]).unwrap().0, 0.0);
    }

    #[test]
    fn identical_scores() {
        let t = [(0.5, true), (0.5, false), (0.5, true), (0.5, false)];
        let mut ops: Vec<_> = det_sweep(&t).unwrap().iter().map(op).collect();
        ops.dedup();
        assert_eq!(ops, [(0.0, 1.0), (1.0, 0.0)]);
        let (e, th) = eer(&t).unwrap();
        assert_eq!(e, 0.5);
        assert_eq!(th, 0.5);
        assert_eq!(min_dcf(&t, &DcfParams::default()).unwrap().0, 1.0);
    }

    #[test]
    fn separated_classes_cost_nothing() {
        let t = [(0.8, true), (0.9, true), (0.1, false), (0.2, false), (0.3, false)];
        assert_eq!(eer(&t).unwrap().0, 0.0);
        let (c, th) = min_dcf(&t, &DcfParams::default()).unwrap();
        assert_eq!(c, 0.0);
        assert_eq!(th, 0.8);
    }

    #[test]
    fn four_trial_crossing() {
        // thresholds 0.1, 0.2, 0.7, 0.8 give (p_miss, p_fa):
        // (0,1) (0,.5) (.5,.5) (.5,0)
        let t = [(0.8, true), (0.2, true), (0.7, false), (0.1, false)];
        let (e, th) = eer(&t).unwrap();
        assert_eq!(e, 0.5);
        assert_eq!(th, 0.7);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(det_sweep(&[(0.1, true), (0.2, true)]), Err(Error::DegenerateLabels)));
        assert!(matches!(eer(&[(0.1, false)]), Err(Error::DegenerateLabels)));
        let bad = DcfParams { p_tar: 1.0, ..Default::default() };
        assert!(min_dcf(&[(0.1, false), (0.2, true)], &bad).is_err());
    }

    #[test]
    fn det_csv_format() {
        let pts = det_sweep(&[(0.9, true), (0.1, false)]).unwrap();
        let mut buf = Vec::new();
        write_det_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("threshold,p_miss,p_fa\n-inf,0,1\n0.1,0,1\n"));
    }
}
