//! Flexible Farrington detector: quasi-Poisson regression on seasonal
//! reference windows with outbreak down-weighting and an optional trend.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlSpec;
use crate::dist::{nb_quantile, normal_cdf, normal_quantile, pois_quantile, NegBinParams};
use crate::error::{param, Error, Result};
use crate::regress::{fit_glm_poisson, predict_glm, reweight_outbreaks, DesignMatrix, GlmFit};
use crate::sts::{MonitoringRange, StsFrame, SurveillanceResult};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ThresholdMethod {
    /// Normal approximation on the identity or two-thirds power scale.
    #[default]
    Delta,
    /// Negative binomial quantile at the plug-in mean and dispersion.
    NbPlugin,
    /// Negative binomial quantile at the upper confidence limit of the mean.
    Muan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerTrans {
    None,
    #[serde(alias = "2/3")]
    Twothirds,
}

/// Threshold suppression: computed only when the last `.1` counts,
/// including the current one, sum to more than `.0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limit54(pub u64, pub usize);

impl Default for Limit54 {
    fn default() -> Self {
        Self(5, 4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FarringtonControl {
    pub range: MonitoringRange,
    #[serde(default = "defaults::b")]
    pub b: usize,
    #[serde(default = "defaults::w")]
    pub w: usize,
    #[serde(default = "defaults::no_periods")]
    pub no_periods: usize,
    #[serde(default = "defaults::weights_threshold")]
    pub weights_threshold: f64,
    #[serde(default = "defaults::past_weeks")]
    pub past_weeks_not_included: usize,
    #[serde(default = "defaults::p_trend")]
    pub p_threshold_trend: f64,
    #[serde(default)]
    pub threshold_method: ThresholdMethod,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    /// Scale of the delta-method bound; unset means two-thirds for
    /// `delta` and none otherwise.
    #[serde(default)]
    pub powertrans: Option<PowerTrans>,
    #[serde(default, alias = "populationBool")]
    pub population_offset: bool,
    #[serde(default = "defaults::limit54")]
    pub limit54: Option<Limit54>,
}

mod defaults {
    use super::Limit54;
    pub fn b() -> usize {
        3
    }
    pub fn w() -> usize {
        3
    }
    pub fn no_periods() -> usize {
        1
    }
    pub fn weights_threshold() -> f64 {
        2.58
    }
    pub fn past_weeks() -> usize {
        26
    }
    pub fn p_trend() -> f64 {
        0.05
    }
    pub fn alpha() -> f64 {
        0.05
    }
    pub fn limit54() -> Option<Limit54> {
        Some(Limit54::default())
    }
}

impl FarringtonControl {
    /// Defaults for every parameter except the range.
    pub fn new(range: MonitoringRange) -> Self {
        Self {
            range,
            b: defaults::b(),
            w: defaults::w(),
            no_periods: defaults::no_periods(),
            weights_threshold: defaults::weights_threshold(),
            past_weeks_not_included: defaults::past_weeks(),
            p_threshold_trend: defaults::p_trend(),
            threshold_method: ThresholdMethod::Delta,
            alpha: defaults::alpha(),
            powertrans: None,
            population_offset: false,
            limit54: defaults::limit54(),
        }
    }

    /// Single-period design, weights threshold 1, three excluded recent
    /// weeks, trend at the 5% level, delta bound.
    pub fn original(range: MonitoringRange) -> Self {
        Self {
            b: 4,
            w: 3,
            no_periods: 1,
            weights_threshold: 1.0,
            past_weeks_not_included: 3,
            p_threshold_trend: 0.05,
            threshold_method: ThresholdMethod::Delta,
            ..Self::new(range)
        }
    }

    /// Ten seasonal levels, weights threshold 2.58, trend always eligible,
    /// negative binomial plug-in bound.
    pub fn improved(range: MonitoringRange) -> Self {
        Self {
            b: 4,
            w: 3,
            no_periods: 10,
            weights_threshold: 2.58,
            past_weeks_not_included: 26,
            p_threshold_trend: 1.0,
            threshold_method: ThresholdMethod::NbPlugin,
            ..Self::new(range)
        }
    }

    fn effective_powertrans(&self) -> PowerTrans {
        self.powertrans.unwrap_or(match self.threshold_method {
            ThresholdMethod::Delta => PowerTrans::Twothirds,
            _ => PowerTrans::None,
        })
    }

    fn validate(&self, freq: usize) -> Result<()> {
        if self.b == 0 {
            return param("b must be at least 1");
        }
        if self.no_periods == 0 || self.no_periods > freq {
            return param(format!("noPeriods must lie in 1..={freq}"));
        }
        if 2 * self.w + 1 > freq {
            return param(format!("window 2w+1 = {} exceeds freq {freq}", 2 * self.w + 1));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return param(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.p_threshold_trend > 0.0 && self.p_threshold_trend <= 1.0) {
            return param("pThresholdTrend must lie in (0, 1]");
        }
        if !(self.weights_threshold > 0.0) {
            return param("weightsThreshold must be positive");
        }
        if let Some(Limit54(_, periods)) = self.limit54 {
            if periods == 0 {
                return param("limit54 needs at least one period");
            }
        }
        Ok(())
    }
}

/// Timepoints entering the regression for one monitored timepoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDesign {
    pub t0: usize,
    /// 0-based rows, increasing.
    pub indices: Vec<usize>,
    /// Seasonal level of each index, 1-based; level 1 holds the windows
    /// around the seasonal position of `t0`.
    pub period_level: Vec<usize>,
    /// `t - t0` for each index.
    pub trend: Vec<f64>,
}

impl ReferenceDesign {
    /// Lengths of the contiguous level-1 runs in time order, counting `t0`
    /// in the run that ends just before it.
    pub fn window_sizes(&self) -> Vec<usize> {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for (&t, &lvl) in self.indices.iter().zip(&self.period_level) {
            if lvl != 1 {
                continue;
            }
            match runs.last_mut() {
                Some((_, end)) if *end + 1 == t => *end = t,
                _ => runs.push((t, t)),
            }
        }
        if let Some(last) = runs.last_mut() {
            if last.1 + 1 == self.t0 {
                last.1 = self.t0;
            }
        }
        runs.iter().map(|(s, e)| e - s + 1).collect()
    }

    /// Drops the `k` most recent timepoints before `t0`.
    pub fn exclude_recent(&self, k: usize) -> Self {
        let keep: Vec<usize> = (0..self.indices.len()).filter(|&i| self.t0 - self.indices[i] > k).collect();
        Self {
            t0: self.t0,
            indices: keep.iter().map(|&i| self.indices[i]).collect(),
            period_level: keep.iter().map(|&i| self.period_level[i]).collect(),
            trend: keep.iter().map(|&i| self.trend[i]).collect(),
        }
    }
}

/// Builds the reference timepoints for `t0` (0-based) from `b` past years
/// of windows of half-width `w`. With one period only the windows enter;
/// otherwise every timepoint from `t0 - b*freq - w` up to `t0 - 1` enters,
/// and the stretches between windows are split into `no_periods - 1`
/// levels of near-equal length.
pub fn build_reference_design(
    t0: usize,
    b: usize,
    w: usize,
    no_periods: usize,
    freq: usize,
    n: usize,
) -> Result<ReferenceDesign> {
    if t0 >= n {
        return Err(Error::OutOfRange(format!("row {} beyond {} rows", t0 + 1, n)));
    }
    if b == 0 || no_periods == 0 || no_periods > freq || 2 * w + 1 > freq {
        return param(format!("inconsistent design b={b}, w={w}, noPeriods={no_periods}, freq={freq}"));
    }
    let span = b * freq + w;
    if t0 < span {
        return Err(Error::InsufficientHistory(format!(
            "row {} needs {} preceding timepoints, has {}",
            t0 + 1,
            span,
            t0
        )));
    }
    let mut indices = Vec::new();
    let mut levels = Vec::new();
    if no_periods == 1 {
        for j in (1..=b).rev() {
            let anchor = t0 - j * freq;
            for t in anchor - w..=anchor + w {
                indices.push(t);
                levels.push(1);
            }
        }
    } else {
        let arc = freq - 2 * w - 1;
        let k = no_periods - 1;
        for t in t0 - span..t0 {
            let e = (t0 - t) % freq;
            let lvl = if e <= w || e >= freq - w {
                1
            } else {
                // position within the arc in time order
                let pos = (freq - w - 1) - e;
                2 + pos * k / arc
            };
            indices.push(t);
            levels.push(lvl);
        }
    }
    let trend = indices.iter().map(|&t| t as f64 - t0 as f64).collect();
    Ok(ReferenceDesign { t0, indices, period_level: levels, trend })
}

/// Two-sided Wald test on the trend plus the history and
/// overextrapolation gates.
pub fn trend_decision(
    fit_with_trend: &GlmFit,
    years_available: usize,
    p_threshold_trend: f64,
    mu_hat_t0: f64,
    max_reference_count: f64,
) -> bool {
    if years_available < 4 || mu_hat_t0 > max_reference_count {
        return false;
    }
    match (fit_with_trend.coefficient("trend"), fit_with_trend.std_error("trend")) {
        (Some(beta), Some(se)) if se > 0.0 => {
            let p = 2.0 * (1.0 - normal_cdf((beta / se).abs()));
            p < p_threshold_trend
        }
        _ => false,
    }
}

fn upper_z(alpha: f64) -> Result<f64> {
    // a negative quantile would put the bound below the mean
    Ok(normal_quantile(1.0 - alpha)?.max(0.0))
}

/// Normal-approximation bound on the identity or two-thirds power scale.
pub fn threshold_delta(mu_hat: f64, var_eta: f64, phi: f64, alpha: f64, powertrans: PowerTrans) -> Result<f64> {
    if !(mu_hat > 0.0) || phi < 1.0 || var_eta < 0.0 {
        return param(format!("invalid delta inputs mu={mu_hat}, var_eta={var_eta}, phi={phi}"));
    }
    let z = upper_z(alpha)?;
    Ok(match powertrans {
        PowerTrans::None => mu_hat + z * (phi * mu_hat + mu_hat * mu_hat * var_eta).sqrt(),
        PowerTrans::Twothirds => {
            mu_hat * (1.0 + 2.0 / 3.0 * z * ((phi + mu_hat * var_eta) / mu_hat).sqrt()).powf(1.5)
        }
    })
}

fn count_quantile(p: f64, mu: f64, phi: f64) -> Result<f64> {
    let q = if phi > 1.0 {
        nb_quantile(p, NegBinParams::from_dispersion(mu, phi)?)?
    } else {
        pois_quantile(p, mu)?
    };
    Ok(q as f64)
}

/// `(1 - alpha)` quantile of NB(mu, mu/(phi-1)), Poisson when `phi == 1`.
pub fn threshold_nbplugin(mu_hat: f64, phi: f64, alpha: f64) -> Result<f64> {
    if !(mu_hat > 0.0) || phi < 1.0 {
        return param(format!("invalid plug-in inputs mu={mu_hat}, phi={phi}"));
    }
    count_quantile(1.0 - alpha, mu_hat, phi)
}

/// Plug-in quantile at the upper `(1 - alpha)` confidence limit of the mean.
pub fn threshold_muan(eta_hat: f64, se_eta: f64, phi: f64, alpha: f64) -> Result<f64> {
    if se_eta < 0.0 || phi < 1.0 || !eta_hat.is_finite() {
        return param(format!("invalid inputs eta={eta_hat}, se={se_eta}, phi={phi}"));
    }
    let mu_star = (eta_hat + upper_z(alpha)? * se_eta).exp();
    if !mu_star.is_finite() {
        return Err(Error::Fit("upper confidence limit of the mean overflows".into()));
    }
    count_quantile(1.0 - alpha, mu_star, phi)
}

/// Result of the pipeline at one monitored timepoint.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub mu_hat: f64,
    pub upperbound: Option<f64>,
    pub alarm: bool,
    pub score: f64,
    pub phi: f64,
    pub trend_included: bool,
    pub note: Option<String>,
}

fn fit_design(rd: &ReferenceDesign, with_trend: bool, no_periods: usize, offset: Option<&[f64]>) -> Result<DesignMatrix> {
    let k = rd.indices.len();
    let mut cols = vec![("intercept".to_string(), vec![1.0; k])];
    if with_trend {
        cols.push(("trend".into(), rd.trend.clone()));
    }
    for lvl in 2..=no_periods {
        cols.push((
            format!("period{lvl}"),
            rd.period_level.iter().map(|&l| if l == lvl { 1.0 } else { 0.0 }).collect(),
        ));
    }
    let d = DesignMatrix::from_columns(cols)?;
    match offset {
        Some(o) => d.with_offset(rd.indices.iter().map(|&t| o[t]).collect()),
        None => Ok(d),
    }
}

/// Runs the full pipeline for one series at row `t0`.
pub fn farrington_point(y: &[u64], log_pop: Option<&[f64]>, freq: usize, t0: usize, ctl: &FarringtonControl) -> Result<PointEstimate> {
    let y0 = y[t0] as f64;
    if let Some(Limit54(cases, periods)) = ctl.limit54 {
        let from = (t0 + 1).saturating_sub(periods);
        let recent: u64 = y[from..=t0].iter().sum();
        if recent <= cases {
            return Ok(PointEstimate {
                mu_hat: f64::NAN,
                upperbound: None,
                alarm: false,
                score: 0.0,
                phi: f64::NAN,
                trend_included: false,
                note: Some(format!("{recent} cases in the last {periods} timepoints; threshold suppressed")),
            });
        }
    }
    let rd = build_reference_design(t0, ctl.b, ctl.w, ctl.no_periods, freq, y.len())?
        .exclude_recent(ctl.past_weeks_not_included);
    if rd.indices.is_empty() {
        return Err(Error::InsufficientHistory("no reference values left after exclusion".into()));
    }
    let y_ref: Vec<f64> = rd.indices.iter().map(|&t| y[t] as f64).collect();
    let max_ref = y_ref.iter().cloned().fold(0.0, f64::max);
    let offset0 = log_pop.map(|o| o[t0]).unwrap_or(0.0);
    if max_ref == 0.0 {
        return Ok(PointEstimate {
            mu_hat: 0.0,
            upperbound: Some(0.0),
            alarm: y0 > 0.0,
            score: 0.0,
            phi: 1.0,
            trend_included: false,
            note: Some("all reference counts are zero".into()),
        });
    }
    let trend_candidate = ctl.b >= 4;
    let design = fit_design(&rd, trend_candidate, ctl.no_periods, log_pop)?;
    let initial = fit_glm_poisson(&y_ref, &design, true)?;
    let mut fit = reweight_outbreaks(&y_ref, &design, &initial, ctl.weights_threshold)?;
    let mut x0 = vec![0.0; design.ncols()];
    x0[0] = 1.0;
    let mut trend_included = false;
    if trend_candidate {
        let (mu_trend, _) = predict_glm(&fit, &x0, offset0)?;
        trend_included = trend_decision(&fit, ctl.b, ctl.p_threshold_trend, mu_trend, max_ref);
        if !trend_included {
            let reduced = design
                .without_column(1)
                .with_weights(fit.prior_weights.iter().copied().collect())?;
            fit = fit_glm_poisson(&y_ref, &reduced, true)?;
            x0.remove(1);
        }
    }
    let (mu, var_eta) = predict_glm(&fit, &x0, offset0)?;
    let phi = fit.dispersion;
    let u = match ctl.threshold_method {
        ThresholdMethod::Delta => threshold_delta(mu, var_eta, phi, ctl.alpha, ctl.effective_powertrans())?,
        ThresholdMethod::NbPlugin => threshold_nbplugin(mu, phi, ctl.alpha)?,
        ThresholdMethod::Muan => threshold_muan(mu.ln(), var_eta.sqrt(), phi, ctl.alpha)?,
    };
    let score = if u > mu { (y0 - mu) / (u - mu) } else { 0.0 };
    let note = (!fit.converged).then(|| format!("regression did not converge in {} iterations", fit.iterations));
    Ok(PointEstimate { mu_hat: mu, upperbound: Some(u), alarm: y0 > u, score, phi, trend_included, note })
}

/// Runs the flexible Farrington detector on every unit over the range.
pub fn farrington_flexible(sts: &StsFrame, control: &FarringtonControl) -> Result<SurveillanceResult> {
    let freq = sts.freq() as usize;
    control.validate(freq)?;
    let range = &control.range;
    range.check_within(sts.n())?;
    let need = control.b * freq + control.w;
    if range.first() < need {
        return Err(Error::InsufficientHistory(format!(
            "row {} has {} preceding timepoints, b*freq + w = {} required",
            range.first() + 1,
            range.first(),
            need
        )));
    }
    let (r, m) = (range.len(), sts.m());
    let jobs: Vec<(usize, usize, usize)> =
        (0..m).flat_map(|u| range.indices().iter().enumerate().map(move |(i, &t)| (u, i, t))).collect();
    let series: Vec<Vec<u64>> = (0..m).map(|u| sts.column(u)).collect();
    let log_pops: Option<Vec<Vec<f64>>> = control
        .population_offset
        .then(|| (0..m).map(|u| sts.population().column(u).iter().map(|p| p.ln()).collect()).collect());
    let outcomes: Vec<Result<PointEstimate>> = jobs
        .par_iter()
        .map(|&(u, _, t)| farrington_point(&series[u], log_pops.as_ref().map(|l| l[u].as_slice()), freq, t, control))
        .collect();
    let mut alarm = DMatrix::from_element(r, m, false);
    let mut upper = DMatrix::from_element(r, m, None);
    let mut score = DMatrix::zeros(r, m);
    let mut notes = Vec::new();
    for (&(u, i, t), out) in jobs.iter().zip(outcomes) {
        let unit = &sts.unit_names()[u];
        match out {
            Ok(p) => {
                alarm[(i, u)] = p.alarm;
                upper[(i, u)] = p.upperbound;
                score[(i, u)] = p.score;
                if let Some(n) = p.note {
                    notes.push(format!("row {} unit {unit}: {n}", t + 1));
                }
            }
            Err(e) => notes.push(format!("row {} unit {unit}: not computed: {e}", t + 1)),
        }
    }
    SurveillanceResult::assemble(
        sts,
        range,
        &sts.all_units(),
        alarm,
        upper,
        score,
        ControlSpec::FarringtonFlexible(control.clone()),
        notes,
    )
}
