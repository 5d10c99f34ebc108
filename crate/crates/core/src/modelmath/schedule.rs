use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginCurve {
    Linear,
    Exponential,
}

/// Margin ramp from `start_m` to `end_m` over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSchedule {
    pub start_m: f64,
    pub end_m: f64,
    pub curve: MarginCurve,
    pub total_steps: usize,
}

impl MarginSchedule {
    pub fn constant(m: f64) -> Self {
        Self { start_m: m, end_m: m, curve: MarginCurve::Linear, total_steps: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.start_m && self.start_m <= self.end_m) || self.total_steps == 0 {
            return Err(Error::InvalidConfig(format!(
                "margin schedule {} -> {} over {} steps",
                self.start_m, self.end_m, self.total_steps
            )));
        }
        if self.curve == MarginCurve::Exponential && self.start_m == 0.0 {
            return Err(Error::InvalidExponentialSchedule);
        }
        Ok(())
    }
}

/// Margin at `step`; steps past the end hold the final value.
pub fn margin_at(step: usize, sched: &MarginSchedule) -> Result<f64> {
    sched.validate()?;
    if step == 0 {
        return Ok(sched.start_m);
    }
    if step >= sched.total_steps {
        return Ok(sched.end_m);
    }
    let frac = step as f64 / sched.total_steps as f64;
    Ok(match sched.curve {
        MarginCurve::Linear => sched.start_m + (sched.end_m - sched.start_m) * frac,
        MarginCurve::Exponential => sched.start_m * (sched.end_m / sched.start_m).powf(frac),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let lin = MarginSchedule { start_m: 0.0, end_m: 0.2, curve: MarginCurve::Linear, total_steps: 10 };
        assert_eq!(margin_at(0, &lin).unwrap(), 0.0);
        assert_eq!(margin_at(10, &lin).unwrap(), 0.2);
        assert!((margin_at(5, &lin).unwrap() - 0.1).abs() < 1e-15);

        let exp = MarginSchedule { start_m: 0.2, end_m: 0.5, curve: MarginCurve::Exponential, total_steps: 10 };
        assert_eq!(margin_at(0, &exp).unwrap(), 0.2);
        assert_eq!(margin_at(10, &exp).unwrap(), 0.5);
        assert!((margin_at(5, &exp).unwrap() - 0.1f64.sqrt()).abs() < 1e-12);
        assert_eq!(margin_at(25, &exp).unwrap(), 0.5);
    }

    #[test]
    fn invalid_schedules() {
        let exp0 = MarginSchedule { start_m: 0.0, end_m: 0.5, curve: MarginCurve::Exponential, total_steps: 4 };
        assert!(matches!(margin_at(1, &exp0), Err(Error::InvalidExponentialSchedule)));
        let down = MarginSchedule { start_m: 0.5, end_m: 0.2, curve: MarginCurve::Linear, total_steps: 4 };
        assert!(margin_at(1, &down).is_err());
        let none = MarginSchedule { total_steps: 0, ..MarginSchedule::constant(0.2) };
        assert!(margin_at(0, &none).is_err());
    }
}
