use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optim::{maximize, Evaluation};
use super::DesignMatrix;
use crate::dist::{ln_factorial, ln_rising};
use crate::error::{Error, Result};

const MAX_NEWTON_ITER: usize = 200;
const GRAD_TOL: f64 = 1e-8;
const MIN_LOG_SIGMA: f64 = -25.0;

/// Which categorical likelihood a [`CategoricalFit`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CategoricalModel {
    /// Logit mean with a constant log-link dispersion.
    BetaBinomial,
    /// Softmax with the given reference category fixed at zero.
    Multinomial { reference: usize },
    /// Log-linear concentration for every category.
    DirichletMultinomial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalFit {
    pub model: CategoricalModel,
    /// p × 1 (beta-binomial), p × (k−1) (multinomial), p × k (Dirichlet-multinomial).
    pub coefficients: DMatrix<f64>,
    pub labels: Vec<String>,
    pub sigma: Option<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Gradient of the log-likelihood at the reported optimum.
    pub gradient: DVector<f64>,
    /// Log-likelihood after each accepted Newton step.
    pub trace: Vec<f64>,
    pub warnings: Vec<String>,
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn check_design(design: &DesignMatrix, n: usize) -> Result<()> {
    if design.nrows() != n {
        return Err(Error::Dimension(format!("design has {} rows for {} observations", design.nrows(), n)));
    }
    if design.ncols() == 0 {
        return Err(Error::Dimension("design has no columns".into()));
    }
    Ok(())
}

/// Beta-binomial log-likelihood with gradient and Hessian in
/// `theta = (beta, log sigma)`.
pub fn betabin_objective(y: &[u64], totals: &[u64], x: &DMatrix<f64>, theta: &DVector<f64>) -> Evaluation {
    let p = x.ncols();
    let s = theta[p];
    if !s.is_finite() || !(MIN_LOG_SIGMA..=30.0).contains(&s) {
        return None;
    }
    let sigma = s.exp();
    let beta = theta.rows(0, p);
    let mut ll = 0.0;
    let mut grad = DVector::zeros(p + 1);
    let mut hess = DMatrix::zeros(p + 1, p + 1);
    for t in 0..y.len() {
        let (yt, nt) = (y[t], totals[t]);
        let xt = x.row(t).transpose();
        let pi = logistic(xt.dot(&beta));
        if !(pi > 0.0 && pi < 1.0) {
            return None;
        }
        let q = 1.0 - pi;
        let (mut l_pi, mut l_s, mut l_pp, mut l_ps, mut l_ss) = (0.0, 0.0, 0.0, 0.0, 0.0);
        ll += ln_factorial(nt) - ln_factorial(yt) - ln_factorial(nt - yt);
        for j in 0..yt {
            let jf = j as f64;
            let a = pi + jf * sigma;
            ll += a.ln();
            l_pi += 1.0 / a;
            l_s += jf / a;
            l_pp -= 1.0 / (a * a);
            l_ps -= jf / (a * a);
            l_ss -= jf * jf / (a * a);
        }
        for j in 0..nt - yt {
            let jf = j as f64;
            let b = q + jf * sigma;
            ll += b.ln();
            l_pi -= 1.0 / b;
            l_s += jf / b;
            l_pp -= 1.0 / (b * b);
            l_ps += jf / (b * b);
            l_ss -= jf * jf / (b * b);
        }
        for j in 1..nt {
            let jf = j as f64;
            let c = 1.0 + jf * sigma;
            ll -= c.ln();
            l_s -= jf / c;
            l_ss += jf * jf / (c * c);
        }
        let g = pi * q;
        let g2 = g * (1.0 - 2.0 * pi);
        let d_eta = l_pi * g;
        let d_eta2 = l_pp * g * g + l_pi * g2;
        for i in 0..p {
            grad[i] += d_eta * xt[i];
            for k in 0..p {
                hess[(i, k)] += d_eta2 * xt[i] * xt[k];
            }
            hess[(i, p)] += l_ps * g * sigma * xt[i];
        }
        grad[p] += l_s * sigma;
        hess[(p, p)] += l_ss * sigma * sigma + l_s * sigma;
    }
    for i in 0..p {
        hess[(p, i)] = hess[(i, p)];
    }
    ll.is_finite().then_some((ll, grad, hess))
}

/// Multinomial logit log-likelihood; `theta` stacks the p coefficients of
/// each non-reference category.
pub fn multinomial_objective(counts: &DMatrix<u64>, x: &DMatrix<f64>, reference: usize, theta: &DVector<f64>) -> Evaluation {
    let (n, k) = counts.shape();
    let p = x.ncols();
    let free: Vec<usize> = (0..k).filter(|&c| c != reference).collect();
    let mut ll = 0.0;
    let mut grad = DVector::zeros(p * free.len());
    let mut hess = DMatrix::zeros(p * free.len(), p * free.len());
    let mut probs = vec![0.0; k];
    for t in 0..n {
        let xt = x.row(t).transpose();
        let mut etas = vec![0.0; k];
        for (ci, &c) in free.iter().enumerate() {
            etas[c] = xt.dot(&theta.rows(ci * p, p));
        }
        let mx = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = etas.iter().map(|e| (e - mx).exp()).sum();
        let log_denom = mx + denom.ln();
        let total: u64 = counts.row(t).iter().sum();
        ll += ln_factorial(total);
        for c in 0..k {
            probs[c] = (etas[c] - log_denom).exp();
            let yc = counts[(t, c)];
            ll += yc as f64 * (etas[c] - log_denom) - ln_factorial(yc);
        }
        let nt = total as f64;
        for (ci, &c) in free.iter().enumerate() {
            let r = counts[(t, c)] as f64 - nt * probs[c];
            for i in 0..p {
                grad[ci * p + i] += r * xt[i];
            }
            for (di, &d) in free.iter().enumerate() {
                let w = -nt * probs[c] * (if c == d { 1.0 } else { 0.0 } - probs[d]);
                for i in 0..p {
                    for j in 0..p {
                        hess[(ci * p + i, di * p + j)] += w * xt[i] * xt[j];
                    }
                }
            }
        }
    }
    ll.is_finite().then_some((ll, grad, hess))
}

/// Dirichlet-multinomial log-likelihood; `theta` stacks the p coefficients
/// of every category's log concentration.
pub fn dirmult_objective(counts: &DMatrix<u64>, x: &DMatrix<f64>, theta: &DVector<f64>) -> Evaluation {
    let (n, k) = counts.shape();
    let p = x.ncols();
    let mut ll = 0.0;
    let mut grad = DVector::zeros(p * k);
    let mut hess = DMatrix::zeros(p * k, p * k);
    let mut alpha = vec![0.0; k];
    let mut a = vec![0.0; k];
    let mut e = vec![0.0; k];
    for t in 0..n {
        let xt = x.row(t).transpose();
        for c in 0..k {
            alpha[c] = xt.dot(&theta.rows(c * p, p)).exp();
            if !(alpha[c] > 0.0 && alpha[c].is_finite()) {
                return None;
            }
        }
        let big_a: f64 = alpha.iter().sum();
        let total: u64 = counts.row(t).iter().sum();
        ll += ln_factorial(total) - ln_rising(big_a, total);
        let (mut b, mut f) = (0.0, 0.0);
        for j in 0..total {
            let v = big_a + j as f64;
            b += 1.0 / v;
            f += 1.0 / (v * v);
        }
        for c in 0..k {
            let yc = counts[(t, c)];
            ll += ln_rising(alpha[c], yc) - ln_factorial(yc);
            a[c] = 0.0;
            e[c] = 0.0;
            for j in 0..yc {
                let v = alpha[c] + j as f64;
                a[c] += 1.0 / v;
                e[c] += 1.0 / (v * v);
            }
        }
        for c in 0..k {
            let gc = (a[c] - b) * alpha[c];
            for i in 0..p {
                grad[c * p + i] += gc * xt[i];
            }
            for d in 0..k {
                let mut w = f * alpha[c] * alpha[d];
                if c == d {
                    w += -e[c] * alpha[c] * alpha[c] + (a[c] - b) * alpha[c];
                }
                for i in 0..p {
                    for j in 0..p {
                        hess[(c * p + i, d * p + j)] += w * xt[i] * xt[j];
                    }
                }
            }
        }
    }
    ll.is_finite().then_some((ll, grad, hess))
}

fn binomial_logit_start(y: &[u64], totals: &[u64], x: &DMatrix<f64>) -> DVector<f64> {
    let k2 = DMatrix::from_fn(y.len(), 2, |t, c| if c == 0 { totals[t] - y[t] } else { y[t] });
    maximize(|th| multinomial_objective(&k2, x, 0, th), DVector::zeros(x.ncols()), MAX_NEWTON_ITER, GRAD_TOL)
        .map(|o| o.x)
        .unwrap_or_else(|| DVector::zeros(x.ncols()))
}

/// Beta-binomial regression: logit π_t = x_tᵀβ, constant log σ.
pub fn fit_betabin_logit(y: &[u64], totals: &[u64], design: &DesignMatrix) -> Result<CategoricalFit> {
    check_design(design, y.len())?;
    if totals.len() != y.len() {
        return Err(Error::Dimension(format!("{} totals for {} counts", totals.len(), y.len())));
    }
    if let Some(t) = (0..y.len()).find(|&t| y[t] > totals[t]) {
        return Err(Error::Data(format!("count {} exceeds total {} at row {}", y[t], totals[t], t + 1)));
    }
    let mut warnings = Vec::new();
    let sy: u64 = y.iter().sum();
    let sn: u64 = totals.iter().sum();
    if sy == 0 || sy == sn {
        return Err(Error::Fit("all trials are failures or all are successes; the logit mean is unbounded".into()));
    }
    let x = &design.x;
    let p = x.ncols();
    let beta0 = binomial_logit_start(y, totals, x);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for step in 0..=24 {
        let s = -10.0 + 0.5 * step as f64;
        let mut th = beta0.clone().insert_row(p, s);
        th[p] = s;
        if let Some((ll, _, _)) = betabin_objective(y, totals, x, &th) {
            if best.as_ref().is_none_or(|b| ll > b.0) {
                best = Some((ll, th));
            }
        }
    }
    let (_, start) = best.ok_or_else(|| Error::Fit("no finite starting value".into()))?;
    let out = maximize(|th| betabin_objective(y, totals, x, th), start, MAX_NEWTON_ITER, GRAD_TOL)
        .ok_or_else(|| Error::Fit("beta-binomial likelihood undefined at start".into()))?;
    if !out.converged {
        warnings.push(format!("beta-binomial fit stopped after {} iterations", out.iterations));
    }
    if out.x[p] <= MIN_LOG_SIGMA + 1.0 {
        warnings.push("dispersion at the binomial boundary".into());
    }
    if out.x.rows(0, p).amax() > 30.0 {
        warnings.push("large logit coefficients suggest separation".into());
    }
    let n_params = p + 1;
    Ok(CategoricalFit {
        model: CategoricalModel::BetaBinomial,
        coefficients: DMatrix::from_column_slice(p, 1, out.x.rows(0, p).as_slice()),
        labels: design.labels.clone(),
        sigma: Some(out.x[p].exp()),
        loglik: out.loglik,
        aic: -2.0 * out.loglik + 2.0 * n_params as f64,
        n_params,
        converged: out.converged,
        iterations: out.iterations,
        gradient: out.gradient,
        trace: out.trace,
        warnings,
    })
}

fn check_counts(counts: &DMatrix<u64>, design: &DesignMatrix) -> Result<()> {
    check_design(design, counts.nrows())?;
    if counts.ncols() < 2 {
        return Err(Error::Dimension("at least two categories are required".into()));
    }
    Ok(())
}

/// Multinomial logit regression with `reference` as baseline category.
pub fn fit_multinomial_logit(counts: &DMatrix<u64>, design: &DesignMatrix, reference: usize) -> Result<CategoricalFit> {
    check_counts(counts, design)?;
    let k = counts.ncols();
    if reference >= k {
        return Err(Error::OutOfRange(format!("reference category {} of {}", reference + 1, k)));
    }
    if let Some(c) = (0..k).find(|&c| counts.column(c).iter().all(|&v| v == 0)) {
        return Err(Error::Fit(format!("category {} is empty", c + 1)));
    }
    let p = design.ncols();
    let x = &design.x;
    let out = maximize(
        |th| multinomial_objective(counts, x, reference, th),
        DVector::zeros(p * (k - 1)),
        MAX_NEWTON_ITER,
        GRAD_TOL,
    )
    .ok_or_else(|| Error::Fit("multinomial likelihood undefined at start".into()))?;
    let mut warnings = Vec::new();
    if !out.converged {
        warnings.push(format!("multinomial fit stopped after {} iterations", out.iterations));
    }
    let n_params = p * (k - 1);
    Ok(CategoricalFit {
        model: CategoricalModel::Multinomial { reference },
        coefficients: DMatrix::from_column_slice(p, k - 1, out.x.as_slice()),
        labels: design.labels.clone(),
        sigma: None,
        loglik: out.loglik,
        aic: -2.0 * out.loglik + 2.0 * n_params as f64,
        n_params,
        converged: out.converged,
        iterations: out.iterations,
        gradient: out.gradient,
        trace: out.trace,
        warnings,
    })
}

/// Dirichlet-multinomial regression with log α_{ti} = x_tᵀβ_i.
pub fn fit_dirichlet_multinomial(counts: &DMatrix<u64>, design: &DesignMatrix) -> Result<CategoricalFit> {
    check_counts(counts, design)?;
    let k = counts.ncols();
    let p = design.ncols();
    let x = &design.x;
    // start from multinomial proportions scaled by a scanned precision
    let base = match fit_multinomial_logit(counts, design, 0) {
        Ok(m) => {
            let mut b = DMatrix::zeros(p, k);
            b.columns_mut(1, k - 1).copy_from(&m.coefficients);
            b
        }
        Err(_) => DMatrix::zeros(p, k),
    };
    let intercept = (0..p).find(|&j| x.column(j).iter().all(|&v| v == 1.0));
    let mut start = DVector::from_column_slice(base.as_slice());
    if let Some(j) = intercept {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for step in 0..=30 {
            let la = -3.0 + 0.5 * step as f64;
            let mut th = start.clone();
            for c in 0..k {
                th[c * p + j] += la;
            }
            if let Some((ll, _, _)) = dirmult_objective(counts, x, &th) {
                if best.as_ref().is_none_or(|b| ll > b.0) {
                    best = Some((ll, th));
                }
            }
        }
        if let Some((_, th)) = best {
            start = th;
        }
    }
    let out = maximize(|th| dirmult_objective(counts, x, th), start, MAX_NEWTON_ITER, GRAD_TOL)
        .ok_or_else(|| Error::Fit("Dirichlet-multinomial likelihood undefined at start".into()))?;
    let mut warnings = Vec::new();
    if !out.converged {
        warnings.push(format!("Dirichlet-multinomial fit stopped after {} iterations", out.iterations));
    }
    let n_params = p * k;
    Ok(CategoricalFit {
        model: CategoricalModel::DirichletMultinomial,
        coefficients: DMatrix::from_column_slice(p, k, out.x.as_slice()),
        labels: design.labels.clone(),
        sigma: None,
        loglik: out.loglik,
        aic: -2.0 * out.loglik + 2.0 * n_params as f64,
        n_params,
        converged: out.converged,
        iterations: out.iterations,
        gradient: out.gradient,
        trace: out.trace,
        warnings,
    })
}

/// Predicted category probabilities (multinomial), concentrations α
/// (Dirichlet-multinomial) or `[π, 1 − π]` (beta-binomial).
pub fn predict_categorical(fit: &CategoricalFit, x_new: &[f64]) -> Result<Vec<f64>> {
    let p = fit.coefficients.nrows();
    if x_new.len() != p {
        return Err(Error::Dimension(format!("{} covariates for {} coefficients", x_new.len(), p)));
    }
    let xv = DVector::from_column_slice(x_new);
    let etas: Vec<f64> = fit.coefficients.column_iter().map(|c| c.dot(&xv)).collect();
    Ok(match fit.model {
        CategoricalModel::BetaBinomial => {
            let pi = logistic(etas[0]);
            vec![pi, 1.0 - pi]
        }
        CategoricalModel::Multinomial { reference } => {
            let mut full = etas;
            full.insert(reference, 0.0);
            softmax(&full)
        }
        CategoricalModel::DirichletMultinomial => etas.iter().map(|e| e.exp()).collect(),
    })
}

pub(crate) fn softmax(etas: &[f64]) -> Vec<f64> {
    let mx = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = etas.iter().map(|e| (e - mx).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.into_iter().map(|v| v / s).collect()
}
