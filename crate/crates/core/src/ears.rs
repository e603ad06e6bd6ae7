//! EARS C1: a one-timepoint threshold from the seven preceding counts.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control::ControlSpec;
use crate::dist::normal_quantile;
use crate::error::{param, Error, Result};
use crate::sts::{MonitoringRange, StsFrame, SurveillanceResult};

pub const BASELINE: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarsControl {
    pub range: MonitoringRange,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.001
}

impl EarsControl {
    pub fn new(range: MonitoringRange, alpha: f64) -> Self {
        Self { range, alpha }
    }
}

/// Threshold and score for one timepoint given its baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct C1Bound {
    pub mean: f64,
    pub sd: f64,
    pub upperbound: f64,
    /// `(y - mean) / sd`, or 0 for a constant baseline.
    pub score: f64,
}

/// Upper bound `mean + z * sd` over a baseline window (sample variance).
pub fn c1_bound(baseline: &[f64], y: f64, z: f64) -> C1Bound {
    let k = baseline.len() as f64;
    let mean = baseline.iter().sum::<f64>() / k;
    let var = baseline.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let sd = var.sqrt();
    let score = if sd > 0.0 { (y - mean) / sd } else { 0.0 };
    C1Bound { mean, sd, upperbound: mean + z * sd, score }
}

/// Runs EARS C1 on every unit of `sts` over the control's range.
pub fn ears_c1(sts: &StsFrame, control: &EarsControl) -> Result<SurveillanceResult> {
    if !(control.alpha > 0.0 && control.alpha < 1.0) {
        return param(format!("alpha must lie in (0, 1), got {}", control.alpha));
    }
    let range = &control.range;
    range.check_within(sts.n())?;
    if range.first() < BASELINE {
        return Err(Error::InsufficientHistory(format!(
            "row {} has {} preceding timepoints, {} required",
            range.first() + 1,
            range.first(),
            BASELINE
        )));
    }
    let z = normal_quantile(1.0 - control.alpha)?;
    let (r, m) = (range.len(), sts.m());
    let mut alarm = DMatrix::from_element(r, m, false);
    let mut upper = DMatrix::from_element(r, m, None);
    let mut score = DMatrix::zeros(r, m);
    let obs = sts.observed();
    for u in 0..m {
        for (i, &t0) in range.indices().iter().enumerate() {
            let base: Vec<f64> = (t0 - BASELINE..t0).map(|t| obs[(t, u)] as f64).collect();
            let y = obs[(t0, u)] as f64;
            let b = c1_bound(&base, y, z);
            alarm[(i, u)] = y > b.upperbound;
            upper[(i, u)] = Some(b.upperbound);
            score[(i, u)] = b.score;
        }
    }
    let units = sts.all_units();
    SurveillanceResult::assemble(sts, range, &units, alarm, upper, score, ControlSpec::EarsC1(control.clone()), vec![])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sts::EpochSpec;
    use approx::assert_abs_diff_eq;

    fn frame(y: &[u64]) -> StsFrame {
        StsFrame::new(DMatrix::from_column_slice(y.len(), 1, y), EpochSpec::Index, 52, (2020, 1)).unwrap()
    }

    #[test]
    fn linear_baseline_bound() {
        for (y, expect) in [(8, true), (7, false)] {
            let sts = frame(&[1, 2, 3, 4, 5, 6, 7, y]);
            let ctl = EarsControl::new(MonitoringRange::new(vec![7], 8).unwrap(), 0.05);
            let res = ears_c1(&sts, &ctl).unwrap();
            assert_abs_diff_eq!(res.upperbounds()[(0, 0)].unwrap(), 7.5533, epsilon = 1e-3);
            assert_eq!(res.alarms()[(0, 0)], expect);
        }
    }

    #[test]
    fn constant_baseline() {
        let b = c1_bound(&[5.0; 7], 6.0, 1.64);
        assert_eq!((b.upperbound, b.score), (5.0, 0.0));
        let sts = frame(&[5, 5, 5, 5, 5, 5, 5, 6, 5]);
        let ctl = EarsControl::new(MonitoringRange::new(vec![7], 9).unwrap(), 0.05);
        assert!(ears_c1(&sts, &ctl).unwrap().alarms()[(0, 0)]);
        let sts = frame(&[5, 5, 5, 5, 5, 5, 5, 5]);
        let ctl = EarsControl::new(MonitoringRange::new(vec![7], 8).unwrap(), 0.05);
        assert!(!ears_c1(&sts, &ctl).unwrap().alarms()[(0, 0)]);
    }

    #[test]
    fn rejects_short_history_and_bad_alpha() {
        let sts = frame(&[1, 2, 3, 4, 5, 6, 7, 8]);
        let short = EarsControl::new(MonitoringRange::new(vec![6], 8).unwrap(), 0.05);
        assert!(matches!(ears_c1(&sts, &short), Err(Error::InsufficientHistory(_))));
        let bad = EarsControl::new(MonitoringRange::new(vec![7], 8).unwrap(), 1.0);
        assert!(ears_c1(&sts, &bad).is_err());
    }

    #[test]
    fn smaller_alpha_raises_bound() {
        let sts = frame(&[3, 9, 2, 7, 4, 8, 1, 6, 12, 5, 9]);
        let range = MonitoringRange::span(7, 10, 11).unwrap();
        let lo = ears_c1(&sts, &EarsControl::new(range.clone(), 0.01)).unwrap();
        let hi = ears_c1(&sts, &EarsControl::new(range, 0.05)).unwrap();
        for i in 0..4 {
            assert!(lo.upperbounds()[(i, 0)].unwrap() > hi.upperbounds()[(i, 0)].unwrap());
            assert!(!lo.alarms()[(i, 0)] || hi.alarms()[(i, 0)]);
        }
    }
}
