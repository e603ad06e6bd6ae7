//! Likelihood-ratio CUSUM for proportions and compositions.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control::ControlSpec;
use crate::cusum::{CusumTrace, Ret};
use crate::dist::{betabin_ln_pmf_unchecked, binom_ln_pmf, dirmult_ln_pmf_unchecked, ln_factorial, BetaBinParams};
use crate::error::{param, Error, Result};
use crate::regress::{
    fit_betabin_logit, fit_dirichlet_multinomial, fit_multinomial_logit, predict_categorical, CategoricalFit,
    DesignMatrix,
};
use crate::sts::{MonitoringRange, StsFrame, SurveillanceResult};

/// Sampling model of the category counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CatFamily {
    #[serde(rename = "binomial")]
    Binomial,
    #[serde(rename = "betabinomial")]
    BetaBinomial,
    #[serde(rename = "multinomial")]
    Multinomial,
    #[serde(rename = "dirichletmultinomial")]
    DirichletMultinomial,
}

impl CatFamily {
    pub fn is_binary(&self) -> bool {
        matches!(self, Self::Binomial | Self::BetaBinomial)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatControl {
    pub range: MonitoringRange,
    pub h: f64,
    /// In-control parameters per monitored timepoint: category
    /// probabilities, or concentrations for the Dirichlet-multinomial.
    pub pi0: Vec<Vec<f64>>,
    /// Out-of-control parameters, same layout as `pi0`.
    pub pi1: Vec<Vec<f64>>,
    pub family: CatFamily,
    /// Beta-binomial dispersion, held fixed during monitoring.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub ret: Ret,
}

impl CatControl {
    fn validate(&self, k: usize) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return param(format!("h must be positive, got {}", self.h));
        }
        let r = self.range.len();
        if self.pi0.len() != r || self.pi1.len() != r {
            return Err(Error::Dimension(format!(
                "{} / {} parameter columns for {} monitored rows",
                self.pi0.len(),
                self.pi1.len(),
                r
            )));
        }
        if self.family.is_binary() && k != 2 {
            return Err(Error::Dimension(format!("binomial families need 2 categories, frame has {k}")));
        }
        if self.family == CatFamily::BetaBinomial && !self.sigma.is_some_and(|s| s >= 0.0 && s.is_finite()) {
            return param("beta-binomial needs a nonnegative sigma");
        }
        if self.ret == Ret::Cases && !self.family.is_binary() {
            return param("ret = cases is defined for binomial families only");
        }
        for col in self.pi0.iter().chain(&self.pi1) {
            check_theta(self.family, col, k)?;
        }
        Ok(())
    }
}

fn check_theta(family: CatFamily, theta: &[f64], k: usize) -> Result<()> {
    if theta.len() != k {
        return Err(Error::Dimension(format!("parameter vector of length {} for {k} categories", theta.len())));
    }
    if family == CatFamily::DirichletMultinomial {
        if theta.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return param("concentrations must be positive");
        }
        return Ok(());
    }
    let s: f64 = theta.iter().sum();
    if theta.iter().any(|&p| !(p > 0.0 && p < 1.0)) || (s - 1.0).abs() > 1e-8 {
        return param(format!("probabilities {theta:?} must lie in (0, 1) and sum to 1"));
    }
    Ok(())
}

/// `logit(pi1) = logit(pi0) + log(r)`.
pub fn shift_logit(pi0: f64, r: f64) -> Result<f64> {
    if !(pi0 > 0.0 && pi0 < 1.0) {
        return param(format!("proportion {pi0} outside (0, 1)"));
    }
    if !(r > 0.0 && r.is_finite()) {
        return param(format!("odds ratio {r} must be positive"));
    }
    let odds = pi0 / (1.0 - pi0) * r;
    Ok(odds / (1.0 + odds))
}

/// Predictions of `fit` at each row of `x` after adding `delta` to the
/// intercept of each parameterized category.
pub fn shift_intercept(fit: &CategoricalFit, delta: &[f64], x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    let q = fit.coefficients.ncols();
    if delta.len() != q {
        return Err(Error::Dimension(format!("{} shifts for {} parameterized categories", delta.len(), q)));
    }
    let row = fit.labels.iter().position(|l| l == "intercept").unwrap_or(0);
    let mut shifted = fit.clone();
    for (c, d) in delta.iter().enumerate() {
        shifted.coefficients[(row, c)] += d;
    }
    (0..x.nrows())
        .map(|t| predict_categorical(&shifted, x.row(t).iter().copied().collect::<Vec<_>>().as_slice()))
        .collect()
}

/// Log mass of category counts `y` with total `n`.
pub fn cat_log_pmf(family: CatFamily, sigma: f64, y: &[u64], n: u64, theta: &[f64]) -> f64 {
    match family {
        CatFamily::Binomial => binom_ln_pmf(y[0], n, theta[0]),
        CatFamily::BetaBinomial => betabin_ln_pmf_unchecked(y[0], &BetaBinParams { size: n, pi: theta[0], sigma }),
        CatFamily::Multinomial => {
            let mut lp = ln_factorial(n);
            for (&yi, &p) in y.iter().zip(theta) {
                lp -= ln_factorial(yi);
                if yi > 0 {
                    lp += yi as f64 * p.ln();
                }
            }
            lp
        }
        CatFamily::DirichletMultinomial => dirmult_ln_pmf_unchecked(y, theta, n),
    }
}

/// `log f(y; theta1) - log f(y; theta0)`.
pub fn cat_increment(family: CatFamily, sigma: f64, y: &[u64], n: u64, theta0: &[f64], theta1: &[f64]) -> f64 {
    cat_log_pmf(family, sigma, y, n, theta1) - cat_log_pmf(family, sigma, y, n, theta0)
}

/// Runs the categorical CUSUM on a multinomial-mode frame.
pub fn categorical_cusum(sts: &StsFrame, control: &CatControl) -> Result<(SurveillanceResult, CusumTrace)> {
    if !sts.is_multinomial() {
        return Err(Error::Data("categorical CUSUM needs a frame in multinomial mode".into()));
    }
    let k = sts.m();
    control.validate(k)?;
    let range = &control.range;
    range.check_within(sts.n())?;
    let totals = sts.totals();
    let sigma = control.sigma.unwrap_or(0.0);
    let fam = control.family;
    let r = range.len();
    let mut alarm = DMatrix::from_element(r, k, false);
    let mut upper = DMatrix::from_element(r, k, None);
    let mut score = DMatrix::zeros(r, k);
    let mut trace = CusumTrace::default();
    let mut c = 0.0;
    for (i, &t) in range.indices().iter().enumerate() {
        let y: Vec<u64> = sts.observed().row(t).iter().copied().collect();
        let n = totals[t].round() as u64;
        let (th0, th1) = (&control.pi0[i], &control.pi1[i]);
        let stat = f64::max(0.0, c + cat_increment(fam, sigma, &y, n, th0, th1));
        let fired = stat > control.h;
        upper[(i, 0)] = match control.ret {
            Ret::Value => Some(stat),
            Ret::Cases => (0..=n)
                .find(|&y1| c + cat_increment(fam, sigma, &[y1, n - y1], n, th0, th1) > control.h)
                .map(|y1| y1 as f64),
        };
        for u in 0..k {
            alarm[(i, u)] = fired;
            score[(i, u)] = stat;
        }
        trace.statistic.push(stat);
        if fired {
            trace.alarm_times.push(i);
            trace.resets.push(0.0);
            c = 0.0;
        } else {
            c = stat;
        }
    }
    let res = SurveillanceResult::assemble(
        sts,
        range,
        &sts.all_units(),
        alarm,
        upper,
        score,
        ControlSpec::CategoricalCusum(control.clone()),
        vec![],
    )?;
    Ok((res, trace))
}

/// How to derive in- and out-of-control parameters from a regression fitted
/// to the rows preceding the monitoring range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatModelSpec {
    pub family: CatFamily,
    /// Harmonic pairs of period `freq`.
    #[serde(rename = "S", default)]
    pub s: usize,
    #[serde(default)]
    pub trend: bool,
    /// Odds ratio of the shift for binomial families.
    #[serde(rename = "R", default)]
    pub r: Option<f64>,
    /// Intercept shifts per parameterized category for the multinomial
    /// families (`k - 1` multinomial, `k` Dirichlet-multinomial).
    #[serde(default)]
    pub delta: Option<Vec<f64>>,
    /// Reference category of the multinomial logit, 0-based.
    #[serde(default)]
    pub reference: usize,
}

/// Fitted in-control model and the parameter columns it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedParameters {
    pub fit: CategoricalFit,
    pub pi0: Vec<Vec<f64>>,
    pub pi1: Vec<Vec<f64>>,
    pub sigma: Option<f64>,
}

/// Fits `spec` on rows before the range and predicts both parameter sets
/// over the range.
pub fn derive_parameters(sts: &StsFrame, range: &MonitoringRange, spec: &CatModelSpec) -> Result<DerivedParameters> {
    if !sts.is_multinomial() {
        return Err(Error::Data("categorical models need a frame in multinomial mode".into()));
    }
    range.check_within(sts.n())?;
    let phase1: Vec<usize> = (0..range.first()).collect();
    if phase1.is_empty() {
        return Err(Error::InsufficientHistory("no rows before the monitoring range".into()));
    }
    let freq = sts.freq() as f64;
    let design = DesignMatrix::harmonic(&phase1, spec.s, spec.trend, freq);
    let x2 = DesignMatrix::harmonic(range.indices(), spec.s, spec.trend, freq).x;
    let counts = sts.observed().select_rows(&phase1);
    let k = counts.ncols();
    let totals: Vec<u64> = phase1.iter().map(|&t| sts.totals()[t].round() as u64).collect();
    match spec.family {
        CatFamily::Binomial | CatFamily::BetaBinomial => {
            if k != 2 {
                return Err(Error::Dimension(format!("binomial families need 2 categories, frame has {k}")));
            }
            let r = spec.r.ok_or_else(|| Error::Parameter("binomial families need the odds ratio R".into()))?;
            let fit = if spec.family == CatFamily::Binomial {
                fit_multinomial_logit(&counts, &design, 1)?
            } else {
                let y: Vec<u64> = counts.column(0).iter().copied().collect();
                fit_betabin_logit(&y, &totals, &design)?
            };
            let pi0 = shift_intercept(&fit, &vec![0.0; fit.coefficients.ncols()], &x2)?;
            let pi0: Vec<Vec<f64>> = pi0.into_iter().map(|v| vec![v[0], 1.0 - v[0]]).collect();
            let pi1 = pi0
                .iter()
                .map(|v| shift_logit(v[0], r).map(|p| vec![p, 1.0 - p]))
                .collect::<Result<Vec<_>>>()?;
            Ok(DerivedParameters { sigma: fit.sigma, fit, pi0, pi1 })
        }
        CatFamily::Multinomial | CatFamily::DirichletMultinomial => {
            let fit = if spec.family == CatFamily::Multinomial {
                fit_multinomial_logit(&counts, &design, spec.reference)?
            } else {
                fit_dirichlet_multinomial(&counts, &design)?
            };
            let q = fit.coefficients.ncols();
            let delta = spec.delta.clone().ok_or_else(|| Error::Parameter(format!("delta with {q} entries is required")))?;
            let pi0 = shift_intercept(&fit, &vec![0.0; q], &x2)?;
            let pi1 = shift_intercept(&fit, &delta, &x2)?;
            Ok(DerivedParameters { sigma: None, fit, pi0, pi1 })
        }
    }
}
