//! Shared pieces of the cumulative-sum detectors.

use serde::{Deserialize, Serialize};

/// What a CUSUM detector reports as its upperbound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ret {
    /// The statistic itself.
    #[default]
    Value,
    /// The smallest count that would have raised an alarm.
    Cases,
}

/// Per-timepoint evolution of a CUSUM statistic for one series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CusumTrace {
    /// Statistic after each monitored timepoint, before any reset.
    pub statistic: Vec<f64>,
    /// Positions within the monitoring range where an alarm fired.
    pub alarm_times: Vec<usize>,
    /// Value the statistic restarted from after each alarm.
    pub resets: Vec<f64>,
    /// Positions after which the in-control model was refitted.
    pub refits: Vec<usize>,
}

/// Recursive CUSUM `C_t = max(0, C_{t-1} + inc_t)` from zero, no resets.
pub fn cusum_path(increments: &[f64]) -> Vec<f64> {
    let mut c = 0.0;
    increments
        .iter()
        .map(|inc| {
            c = f64::max(0.0, c + inc);
            c
        })
        .collect()
}
