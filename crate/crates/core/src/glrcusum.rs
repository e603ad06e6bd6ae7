//! Likelihood-ratio and generalized likelihood-ratio CUSUM for counts with
//! a seasonal Poisson or negative binomial in-control model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control::ControlSpec;
use crate::cusum::{CusumTrace, Ret};
use crate::error::{param, Error, Result};
use crate::regress::{fit_glm_poisson, harmonic_row, predict_glm, DesignMatrix};
use crate::sts::{MonitoringRange, StsFrame, SurveillanceResult};

/// Upper limit of the `ret = cases` search.
pub const CASES_CAP: u64 = 1_000_000;
const KAPPA_MAX: f64 = 5.0;
const LAMBDA_MAX: f64 = 20.0;

/// Form of the out-of-control mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Change {
    /// `mu1 = mu0 * exp(kappa)`.
    #[default]
    Intercept,
    /// `mu1 = mu0 + lambda * y_{t-1}`.
    Epi,
}

/// Source of the in-control means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Mu0Spec {
    /// Means for each monitored timepoint, with an optional negative
    /// binomial size (Poisson when absent).
    Values {
        values: Vec<f64>,
        #[serde(default)]
        size: Option<f64>,
    },
    /// Quasi-Poisson fit on the rows preceding the range with `S` harmonic
    /// pairs of period `freq` and an optional linear trend.
    Fit {
        #[serde(rename = "S", default = "one")]
        s: usize,
        #[serde(default)]
        trend: bool,
        #[serde(default)]
        refit: bool,
    },
}

fn one() -> usize {
    1
}

impl Default for Mu0Spec {
    fn default() -> Self {
        Self::Fit { s: 1, trend: false, refit: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlrControl {
    pub range: MonitoringRange,
    #[serde(rename = "c_ARL", default = "default_c_arl")]
    pub c_arl: f64,
    /// Fixed shift; absent means the shift is estimated (GLR).
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub change: Change,
    #[serde(default)]
    pub ret: Ret,
    #[serde(default)]
    pub mu0: Mu0Spec,
    /// Depth of the change-point window for GLR; defaults to `freq`.
    #[serde(rename = "M", default)]
    pub m: Option<usize>,
    /// Start and restart the LR statistic at `c_ARL / 2`.
    #[serde(default)]
    pub fir: bool,
}

fn default_c_arl() -> f64 {
    5.0
}

impl GlrControl {
    pub fn new(range: MonitoringRange, c_arl: f64) -> Self {
        Self {
            range,
            c_arl,
            theta: None,
            change: Change::Intercept,
            ret: Ret::Value,
            mu0: Mu0Spec::default(),
            m: None,
            fir: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.c_arl > 0.0 && self.c_arl.is_finite()) {
            return param(format!("c_ARL must be positive, got {}", self.c_arl));
        }
        if let Some(th) = self.theta {
            if !(th > 0.0 && th.is_finite()) {
                return param(format!("theta must be positive, got {th}"));
            }
        }
        if self.m == Some(0) {
            return param("M must be at least 1");
        }
        if let Mu0Spec::Values { values, size } = &self.mu0 {
            if values.len() != self.range.len() {
                return Err(Error::Dimension(format!("{} in-control means for {} monitored rows", values.len(), self.range.len())));
            }
            if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return param("in-control means must be positive");
            }
            if let Some(s) = size {
                if !(*s > 0.0) {
                    return param("size must be positive");
                }
            }
        }
        Ok(())
    }
}

/// Likelihood under which increments are computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CountModel {
    Poisson,
    /// Size `mu0 / (phi - 1)` at each timepoint.
    Quasi { phi: f64 },
    /// Constant size.
    NegBin { size: f64 },
}

impl CountModel {
    pub fn size(&self, mu0: f64) -> Option<f64> {
        match *self {
            Self::Poisson => None,
            Self::Quasi { phi } if phi > 1.0 => Some(mu0 / (phi - 1.0)),
            Self::Quasi { .. } => None,
            Self::NegBin { size } => Some(size),
        }
    }
}

/// `log f(y; mu1) - log f(y; mu0)`, Poisson when `size` is `None`,
/// otherwise negative binomial with the size held fixed.
pub fn lr_increment(y: u64, mu0: f64, mu1: f64, size: Option<f64>) -> f64 {
    let y = y as f64;
    match size {
        None => y * (mu1 / mu0).ln() - (mu1 - mu0),
        Some(nu) => y * (mu1 / mu0).ln() + (y + nu) * ((nu + mu0).ln() - (nu + mu1).ln()),
    }
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`,
/// returning the best of the interior optimum and both endpoints.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Outcome of the `ret = cases` search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CasesNeeded {
    pub cases: u64,
    /// True when even [`CASES_CAP`] cases would not alarm.
    pub saturated: bool,
}

/// Smallest `y` with `statistic(y) >= threshold` for a statistic that is
/// nondecreasing in `y`.
pub fn cases_needed(statistic: impl Fn(u64) -> f64, threshold: f64) -> CasesNeeded {
    if statistic(0) >= threshold {
        return CasesNeeded { cases: 0, saturated: false };
    }
    let mut lo = 0u64;
    let mut hi = 1u64;
    while statistic(hi) < threshold {
        if hi >= CASES_CAP {
            return CasesNeeded { cases: CASES_CAP, saturated: true };
        }
        lo = hi;
        hi = (hi * 2).min(CASES_CAP);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if statistic(mid) >= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    CasesNeeded { cases: hi, saturated: false }
}

/// Cases needed at one timepoint of a fixed-shift intercept CUSUM.
pub fn cases_needed_lr(mu0: f64, kappa: f64, size: Option<f64>, c_arl: f64, current_c: f64) -> CasesNeeded {
    if current_c >= c_arl {
        return CasesNeeded { cases: 0, saturated: false };
    }
    let mu1 = mu0 * kappa.exp();
    cases_needed(|y| f64::max(0.0, current_c + lr_increment(y, mu0, mu1, size)), c_arl)
}

/// In-control means and dispersion from a quasi-Poisson fit.
#[derive(Debug, Clone, PartialEq)]
pub struct InControl {
    /// Mean at each requested prediction row.
    pub mu0: Vec<f64>,
    pub phi: f64,
}

/// Fits the seasonal in-control model on `phase1` rows of `y` and predicts
/// the means at `predict` rows.
pub fn fit_incontrol(y: &[u64], phase1: &[usize], predict: &[usize], s: usize, trend: bool, freq: u32) -> Result<InControl> {
    if phase1.is_empty() {
        return Err(Error::InsufficientHistory("phase 1 is empty".into()));
    }
    let f = freq as f64;
    let design = DesignMatrix::harmonic(phase1, s, trend, f);
    let yv: Vec<f64> = phase1.iter().map(|&t| y[t] as f64).collect();
    if yv.iter().all(|&v| v == 0.0) {
        return Err(Error::Fit("phase 1 contains only zero counts".into()));
    }
    let fit = fit_glm_poisson(&yv, &design, true)?;
    let mu0 = predict
        .iter()
        .map(|&t| predict_glm(&fit, &harmonic_row((t + 1) as f64, s, trend, f), 0.0).map(|p| p.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(InControl { mu0, phi: fit.dispersion })
}

/// Per-series output of a CUSUM run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRun {
    pub upperbound: Vec<Option<f64>>,
    pub alarm: Vec<bool>,
    pub score: Vec<f64>,
    pub trace: CusumTrace,
    pub notes: Vec<String>,
}

struct Monitor<'a> {
    y: &'a [u64],
    rows: &'a [usize],
    mu0: Vec<f64>,
    model: CountModel,
    ctl: &'a GlrControl,
    window: usize,
}

impl Monitor<'_> {
    fn y_at(&self, pos: usize, cur: usize, yt: u64) -> u64 {
        if pos == cur {
            yt
        } else {
            self.y[self.rows[pos]]
        }
    }

    fn mu1(&self, pos: usize, param: f64) -> f64 {
        let mu0 = self.mu0[pos];
        match self.ctl.change {
            Change::Intercept => mu0 * param.exp(),
            Change::Epi => mu0 + param * self.y[self.rows[pos] - 1] as f64,
        }
    }

    fn inc(&self, pos: usize, cur: usize, yt: u64, param: f64) -> f64 {
        let mu0 = self.mu0[pos];
        lr_increment(self.y_at(pos, cur, yt), mu0, self.mu1(pos, param), self.model.size(mu0))
    }

    /// Statistic at position `cur` if its count were `yt`.
    fn statistic(&self, cur: usize, yt: u64, c_prev: f64, seg_start: usize) -> f64 {
        if let Some(theta) = self.ctl.theta {
            return f64::max(0.0, c_prev + self.inc(cur, cur, yt, theta));
        }
        let lo = seg_start.max((cur + 1).saturating_sub(self.window));
        let mut best = 0.0f64;
        if self.ctl.change == Change::Intercept && self.model.size(1.0).is_none() {
            let (mut sy, mut smu) = (0.0, 0.0);
            for s in (lo..=cur).rev() {
                sy += self.y_at(s, cur, yt) as f64;
                smu += self.mu0[s];
                if sy > smu {
                    let k = (sy / smu).ln();
                    best = best.max(sy * k - smu * (k.exp() - 1.0));
                }
            }
            return best;
        }
        let hi = match self.ctl.change {
            Change::Intercept => KAPPA_MAX,
            Change::Epi => LAMBDA_MAX,
        };
        for s in lo..=cur {
            let f = |p: f64| (s..=cur).map(|u| self.inc(u, cur, yt, p)).sum::<f64>();
            let (_, v) = golden_max(f, 0.0, hi, 1e-6);
            best = best.max(v);
        }
        best
    }
}

fn run_series(y: &[u64], freq: u32, ctl: &GlrControl, poisson: bool) -> Result<SeriesRun> {
    let rows = ctl.range.indices();
    let first = rows[0];
    if ctl.change == Change::Epi && first == 0 {
        return Err(Error::InsufficientHistory("epidemic change needs a count before the first monitored row".into()));
    }
    let mut notes = Vec::new();
    let (mu0, model) = match &ctl.mu0 {
        Mu0Spec::Values { values, size } => {
            let model = match (poisson, size) {
                (false, Some(nu)) => CountModel::NegBin { size: *nu },
                _ => CountModel::Poisson,
            };
            (values.clone(), model)
        }
        Mu0Spec::Fit { s, trend, .. } => {
            let phase1: Vec<usize> = (0..first).collect();
            let ic = fit_incontrol(y, &phase1, rows, *s, *trend, freq)?;
            let model = if poisson { CountModel::Poisson } else { CountModel::Quasi { phi: ic.phi } };
            (ic.mu0, model)
        }
    };
    let window = if ctl.theta.is_some() { usize::MAX } else { ctl.m.unwrap_or(freq as usize) };
    let mut mon = Monitor { y, rows, mu0, model, ctl, window };
    let restart = if ctl.fir { ctl.c_arl / 2.0 } else { 0.0 };
    let (mut c, mut seg_start) = (restart, 0usize);
    let n = rows.len();
    let mut out = SeriesRun {
        upperbound: Vec::with_capacity(n),
        alarm: Vec::with_capacity(n),
        score: Vec::with_capacity(n),
        trace: CusumTrace::default(),
        notes: vec![],
    };
    for i in 0..n {
        let yt = y[rows[i]];
        let stat = mon.statistic(i, yt, c, seg_start);
        let reported = match ctl.ret {
            Ret::Value => stat,
            Ret::Cases => {
                let need = cases_needed(|v| mon.statistic(i, v, c, seg_start), ctl.c_arl);
                if need.saturated {
                    notes.push(format!("row {}: more than {CASES_CAP} cases needed", rows[i] + 1));
                }
                need.cases as f64
            }
        };
        let alarm = stat >= ctl.c_arl;
        out.upperbound.push(Some(reported));
        out.score.push(reported);
        out.alarm.push(alarm);
        out.trace.statistic.push(stat);
        if alarm {
            out.trace.alarm_times.push(i);
            out.trace.resets.push(restart);
            c = restart;
            seg_start = i + 1;
            if let Mu0Spec::Fit { s, trend, refit: true } = &ctl.mu0 {
                if i + 1 < n {
                    let phase1: Vec<usize> = (0..rows[i]).collect();
                    let ic = fit_incontrol(y, &phase1, &rows[i + 1..], *s, *trend, freq)?;
                    mon.mu0.truncate(i + 1);
                    mon.mu0.extend(ic.mu0);
                    if !poisson {
                        mon.model = CountModel::Quasi { phi: ic.phi };
                    }
                    out.trace.refits.push(i);
                }
            }
        } else {
            c = stat;
        }
    }
    out.notes = notes;
    Ok(out)
}

fn run(sts: &StsFrame, ctl: &GlrControl, poisson: bool) -> Result<(SurveillanceResult, Vec<CusumTrace>)> {
    ctl.validate()?;
    ctl.range.check_within(sts.n())?;
    let (r, m) = (ctl.range.len(), sts.m());
    let mut alarm = DMatrix::from_element(r, m, false);
    let mut upper = DMatrix::from_element(r, m, None);
    let mut score = DMatrix::zeros(r, m);
    let mut traces = Vec::with_capacity(m);
    let mut notes = Vec::new();
    for u in 0..m {
        let res = run_series(&sts.column(u), sts.freq(), ctl, poisson)?;
        for i in 0..r {
            alarm[(i, u)] = res.alarm[i];
            upper[(i, u)] = res.upperbound[i];
            score[(i, u)] = res.score[i];
        }
        notes.extend(res.notes.into_iter().map(|n| format!("unit {}: {n}", sts.unit_names()[u])));
        traces.push(res.trace);
    }
    let spec = if poisson { ControlSpec::Glrpois(ctl.clone()) } else { ControlSpec::Glrnb(ctl.clone()) };
    let result = SurveillanceResult::assemble(sts, &ctl.range, &sts.all_units(), alarm, upper, score, spec, notes)?;
    Ok((result, traces))
}

/// CUSUM with a negative binomial (or Poisson when `phi = 1`) likelihood.
pub fn glrnb(sts: &StsFrame, control: &GlrControl) -> Result<(SurveillanceResult, Vec<CusumTrace>)> {
    run(sts, control, false)
}

/// CUSUM with a Poisson likelihood regardless of overdispersion.
pub fn glrpois(sts: &StsFrame, control: &GlrControl) -> Result<(SurveillanceResult, Vec<CusumTrace>)> {
    run(sts, control, true)
}
