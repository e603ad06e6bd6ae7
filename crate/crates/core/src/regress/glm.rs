use nalgebra::{DMatrix, DVector};

use super::{independent_columns, DesignMatrix};
use crate::dist::ln_factorial;
use crate::error::{Error, Result};

const MAX_IRLS_ITER: usize = 50;
const IRLS_TOL: f64 = 1e-10;

/// Fitted Poisson / quasi-Poisson log-link model.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    /// Coefficients of the kept (non-aliased) columns, in `kept` order.
    pub coefficients: DVector<f64>,
    /// Dispersion-scaled covariance of `coefficients`.
    pub covariance: DMatrix<f64>,
    /// Design columns that entered the fit.
    pub kept: Vec<usize>,
    /// Labels of the columns dropped as aliased.
    pub dropped: Vec<String>,
    pub labels: Vec<String>,
    pub dispersion: f64,
    pub fitted: DVector<f64>,
    pub working_weights: DVector<f64>,
    pub prior_weights: DVector<f64>,
    pub leverage: DVector<f64>,
    pub y: DVector<f64>,
    pub deviance: f64,
    pub pearson_chi2: f64,
    pub df_residual: f64,
    /// Poisson log-likelihood; absent for quasi fits.
    pub loglik: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub quasi: bool,
}

impl GlmFit {
    /// Coefficient for a design column label, if kept.
    pub fn coefficient(&self, label: &str) -> Option<f64> {
        let col = self.labels.iter().position(|l| l == label)?;
        let pos = self.kept.iter().position(|&k| k == col)?;
        Some(self.coefficients[pos])
    }

    /// Standard error for a design column label, if kept.
    pub fn std_error(&self, label: &str) -> Option<f64> {
        let col = self.labels.iter().position(|l| l == label)?;
        let pos = self.kept.iter().position(|&k| k == col)?;
        Some(self.covariance[(pos, pos)].sqrt())
    }

    pub fn aic(&self) -> Option<f64> {
        self.loglik.map(|l| -2.0 * l + 2.0 * self.kept.len() as f64)
    }
}

fn poisson_deviance(y: &DVector<f64>, mu: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let mut dev = 0.0;
    for i in 0..y.len() {
        if w[i] == 0.0 {
            continue;
        }
        let term = if y[i] > 0.0 { y[i] * (y[i] / mu[i]).ln() } else { 0.0 };
        dev += 2.0 * w[i] * (term - (y[i] - mu[i]));
    }
    dev
}

/// Fits `log E(y) = X b + offset` with prior weights by iteratively
/// reweighted least squares. With `quasi`, the dispersion is the Pearson
/// statistic over residual degrees of freedom, floored at 1.
pub fn fit_glm_poisson(y: &[f64], design: &DesignMatrix, quasi: bool) -> Result<GlmFit> {
    let n = design.nrows();
    if y.len() != n {
        return Err(Error::Dimension(format!("{} responses for {} design rows", y.len(), n)));
    }
    if y.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::Data("responses must be finite and nonnegative".into()));
    }
    let w = &design.prior_weights;
    let kept = independent_columns(&design.x, w);
    if kept.is_empty() {
        return Err(Error::Fit("design has no usable columns".into()));
    }
    let n_eff = w.iter().filter(|&&v| v > 0.0).count();
    if n_eff < kept.len() {
        return Err(Error::Fit(format!("{} weighted observations for {} coefficients", n_eff, kept.len())));
    }
    let x = design.x.select_columns(&kept);
    let p = kept.len();
    let yv = DVector::from_column_slice(y);
    let offset = &design.offset;

    let mut mu = yv.map(|v| v + 0.1);
    let mut eta = mu.map(f64::ln);
    let mut beta = DVector::zeros(p);
    let mut dev_old = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_IRLS_ITER {
        iterations += 1;
        let z = DVector::from_fn(n, |i, _| eta[i] - offset[i] + (yv[i] - mu[i]) / mu[i]);
        let sw = DVector::from_fn(n, |i, _| (w[i] * mu[i]).sqrt());
        let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * sw[i]);
        let zw = z.component_mul(&sw);
        let qr = xw.qr();
        let r = qr.r();
        let qtz = qr.q().transpose() * zw;
        let Some(mut beta_new) = r.solve_upper_triangular(&qtz) else {
            return Err(Error::Fit("singular weighted design".into()));
        };
        let mut dev = f64::NAN;
        for _ in 0..30 {
            eta = &x * &beta_new + offset;
            mu = eta.map(f64::exp);
            dev = poisson_deviance(&yv, &mu, w);
            if dev.is_finite() && (iterations == 1 || dev <= dev_old * (1.0 + 1e-12) + 1e-12) {
                break;
            }
            beta_new = (&beta_new + &beta) * 0.5;
        }
        if !dev.is_finite() {
            return Err(Error::Fit("deviance diverged".into()));
        }
        beta = beta_new;
        if (dev - dev_old).abs() / (dev.abs() + 0.1) < IRLS_TOL {
            converged = true;
            break;
        }
        dev_old = dev;
    }

    let working = DVector::from_fn(n, |i, _| w[i] * mu[i]);
    let xtwx = x.transpose() * DMatrix::from_diagonal(&working) * &x;
    let inv = xtwx
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| xtwx.try_inverse())
        .ok_or_else(|| Error::Fit("information matrix is singular".into()))?;
    let leverage = DVector::from_fn(n, |i, _| {
        let xi = x.row(i).transpose();
        working[i] * (xi.transpose() * &inv * &xi)[(0, 0)]
    });
    let pearson: f64 = (0..n).filter(|&i| w[i] > 0.0).map(|i| w[i] * (yv[i] - mu[i]).powi(2) / mu[i]).sum();
    let df = (n_eff - p) as f64;
    let dispersion = if quasi && df > 0.0 { (pearson / df).max(1.0) } else { 1.0 };
    let loglik = (!quasi).then(|| {
        (0..n)
            .filter(|&i| w[i] > 0.0)
            .map(|i| w[i] * (yv[i] * mu[i].ln() - mu[i] - ln_factorial(yv[i].round() as u64)))
            .sum()
    });
    let dropped = (0..design.ncols())
        .filter(|c| !kept.contains(c))
        .map(|c| design.labels[c].clone())
        .collect();

    Ok(GlmFit {
        coefficients: beta,
        covariance: inv * dispersion,
        kept,
        dropped,
        labels: design.labels.clone(),
        dispersion,
        fitted: mu,
        working_weights: working,
        prior_weights: w.clone(),
        leverage,
        y: yv,
        deviance: poisson_deviance(&DVector::from_column_slice(y), &eta.map(f64::exp), w),
        pearson_chi2: pearson,
        df_residual: df,
        loglik,
        converged,
        iterations,
        quasi,
    })
}

/// Standardized Anscombe residuals of a Poisson-family fit.
pub fn anscombe_residuals(fit: &GlmFit) -> Vec<f64> {
    (0..fit.y.len())
        .map(|i| {
            let (y, mu) = (fit.y[i], fit.fitted[i]);
            let h = fit.leverage[i].min(1.0 - 1e-8);
            1.5 * (y.powf(2.0 / 3.0) - mu.powf(2.0 / 3.0)) / (mu.powf(1.0 / 6.0) * (fit.dispersion * (1.0 - h)).sqrt())
        })
        .collect()
}

/// Raw down-weights: `(threshold / r)^2` above the threshold, 1 otherwise.
pub fn outbreak_weights(residuals: &[f64], threshold: f64) -> Vec<f64> {
    residuals
        .iter()
        .map(|&r| if r > threshold { (threshold / r).powi(2).min(1.0) } else { 1.0 })
        .collect()
}

/// Rescales weights so the positive ones average 1.
pub fn normalize_weights(weights: &[f64]) -> Vec<f64> {
    let pos: Vec<f64> = weights.iter().copied().filter(|&w| w > 0.0).collect();
    if pos.is_empty() {
        return weights.to_vec();
    }
    let mean = pos.iter().sum::<f64>() / pos.len() as f64;
    weights.iter().map(|w| w / mean).collect()
}

/// Down-weights observations whose Anscombe residual exceeds the threshold
/// and refits once.
pub fn reweight_outbreaks(y: &[f64], design: &DesignMatrix, fit: &GlmFit, threshold: f64) -> Result<GlmFit> {
    let resid = anscombe_residuals(fit);
    let raw = outbreak_weights(&resid, threshold);
    if raw.iter().all(|&w| w == 1.0) {
        return Ok(fit.clone());
    }
    let combined: Vec<f64> = raw.iter().zip(design.prior_weights.iter()).map(|(a, b)| a * b).collect();
    let reweighted = design.clone().with_weights(normalize_weights(&combined))?;
    fit_glm_poisson(y, &reweighted, fit.quasi)
}

/// Predicted mean and variance of the linear predictor at a new point.
/// `x_new` has one entry per design column, including dropped ones.
pub fn predict_glm(fit: &GlmFit, x_new: &[f64], offset_new: f64) -> Result<(f64, f64)> {
    if x_new.len() != fit.labels.len() {
        return Err(Error::Dimension(format!("{} covariates for {} columns", x_new.len(), fit.labels.len())));
    }
    let xk = DVector::from_iterator(fit.kept.len(), fit.kept.iter().map(|&c| x_new[c]));
    let eta = xk.dot(&fit.coefficients) + offset_new;
    let var_eta = (xk.transpose() * &fit.covariance * &xk)[(0, 0)].max(0.0);
    Ok((eta.exp(), var_eta))
}
