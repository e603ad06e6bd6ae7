//! Probability kernels shared by the detectors.
//!
//! All mass functions are evaluated in log space; the linear-scale variants
//! exponentiate at the boundary. Discrete quantiles are the smallest support
//! point whose cdf reaches the requested probability, using the very same
//! cdf routine so that the two are adjoint.

use std::sync::OnceLock;

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{param, Error, Result};

/// Upper bound on summation length before switching to special functions.
const SUMMATION_LIMIT: f64 = 1e5;

const FACTORIAL_TABLE: usize = 256;

/// `ln k!`, tabulated below 256 so that `ln 0! = ln 1! = 0` exactly.
pub fn ln_factorial(k: u64) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    if (k as usize) < FACTORIAL_TABLE {
        let t = TABLE.get_or_init(|| {
            let mut acc = 0.0f64;
            (0..FACTORIAL_TABLE)
                .map(|j| {
                    if j > 1 {
                        acc += (j as f64).ln();
                    }
                    acc
                })
                .collect()
        });
        t[k as usize]
    } else {
        ln_gamma(k as f64 + 1.0)
    }
}

/// `ln Γ(x + k) − ln Γ(x)`, summed directly for short runs so that large `x`
/// keeps full precision.
pub fn ln_rising(x: f64, k: u64) -> f64 {
    if k <= 30 {
        (0..k).map(|j| (x + j as f64).ln()).sum()
    } else {
        ln_gamma(x + k as f64) - ln_gamma(x)
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

fn check_prob(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        param(format!("probability {p} outside (0, 1)"))
    }
}

// ---------------------------------------------------------------------------
// Normal

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal inverse cdf.
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_prob(p)?;
    Ok(Normal::standard().inverse_cdf(p))
}

// ---------------------------------------------------------------------------
// Poisson

pub fn pois_ln_pmf(y: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    y as f64 * lambda.ln() - lambda - ln_factorial(y)
}

pub fn pois_pmf(y: u64, lambda: f64) -> f64 {
    pois_ln_pmf(y, lambda).exp()
}

fn pois_small(lambda: f64) -> bool {
    lambda + 20.0 * lambda.sqrt() + 20.0 <= SUMMATION_LIMIT
}

pub fn pois_cdf(q: u64, lambda: f64) -> f64 {
    if pois_small(lambda) {
        (0..=q).map(|y| pois_pmf(y, lambda)).sum::<f64>().min(1.0)
    } else {
        gamma_ur(q as f64 + 1.0, lambda)
    }
}

/// Smallest `q` with `P(Y <= q) >= p` for `Y ~ Poisson(lambda)`.
pub fn pois_quantile(p: f64, lambda: f64) -> Result<u64> {
    check_prob(p)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return param(format!("Poisson mean {lambda} must be positive"));
    }
    if pois_small(lambda) {
        Ok(sum_quantile(p, lambda, |y| pois_pmf(y, lambda)))
    } else {
        let guess = normal_guess(p, lambda, lambda.sqrt());
        Ok(search_quantile(p, guess, |q| pois_cdf(q, lambda)))
    }
}

fn normal_guess(p: f64, mean: f64, sd: f64) -> u64 {
    let z = normal_quantile(p).unwrap_or(0.0);
    (mean + z * sd).max(0.0).floor() as u64
}

fn sum_quantile(p: f64, mean: f64, pmf: impl Fn(u64) -> f64) -> u64 {
    let mut acc = 0.0;
    let mut y = 0u64;
    loop {
        let term = pmf(y);
        acc += term;
        if acc >= p || (y as f64 > mean && term < 1e-300) {
            return y;
        }
        y += 1;
    }
}

fn search_quantile(p: f64, guess: u64, cdf: impl Fn(u64) -> f64) -> u64 {
    let mut q = guess;
    while cdf(q) < p {
        q += 1;
    }
    while q > 0 && cdf(q - 1) >= p {
        q -= 1;
    }
    q
}

// ---------------------------------------------------------------------------
// Negative binomial

/// Negative binomial in mean/size form: `Var = mu + mu^2 / nu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegBinParams {
    pub mu: f64,
    pub nu: f64,
}

impl NegBinParams {
    pub fn new(mu: f64, nu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) || !(nu > 0.0) {
            return param(format!("negative binomial needs mu > 0 and nu > 0, got ({mu}, {nu})"));
        }
        Ok(Self { mu, nu })
    }

    /// Size matching a dispersion factor `phi > 1`: `nu = mu / (phi - 1)`.
    pub fn from_dispersion(mu: f64, phi: f64) -> Result<Self> {
        if !(phi > 1.0) {
            return param(format!("dispersion {phi} must exceed 1"));
        }
        Self::new(mu, mu / (phi - 1.0))
    }

    pub fn variance(&self) -> f64 {
        self.mu + self.mu * self.mu / self.nu
    }

    pub fn dispersion(&self) -> f64 {
        1.0 + self.mu / self.nu
    }

    fn small(&self) -> bool {
        self.mu + 20.0 * self.variance().sqrt() + 20.0 <= SUMMATION_LIMIT
    }
}

pub fn nb_ln_pmf(y: u64, p: NegBinParams) -> f64 {
    let (mu, nu) = (p.mu, p.nu);
    let yf = y as f64;
    ln_rising(nu, y) - ln_factorial(y) - nu * (mu / nu).ln_1p() + yf * (mu.ln() - (nu + mu).ln())
}

pub fn nb_pmf(y: u64, p: NegBinParams) -> f64 {
    nb_ln_pmf(y, p).exp()
}

pub fn nb_cdf(q: u64, p: NegBinParams) -> f64 {
    if p.small() {
        (0..=q).map(|y| nb_pmf(y, p)).sum::<f64>().min(1.0)
    } else {
        beta_reg(p.nu, q as f64 + 1.0, p.nu / (p.nu + p.mu))
    }
}

/// Smallest `q` with `P(Y <= q) >= prob` for `Y ~ NB(mu, nu)`.
pub fn nb_quantile(prob: f64, p: NegBinParams) -> Result<u64> {
    check_prob(prob)?;
    if p.small() {
        Ok(sum_quantile(prob, p.mu, |y| nb_pmf(y, p)))
    } else {
        let guess = normal_guess(prob, p.mu, p.variance().sqrt());
        Ok(search_quantile(prob, guess, |q| nb_cdf(q, p)))
    }
}

// ---------------------------------------------------------------------------
// Binomial / beta-binomial

pub fn binom_ln_pmf(y: u64, n: u64, p: f64) -> f64 {
    if y > n {
        return f64::NEG_INFINITY;
    }
    let (yf, rest) = (y as f64, (n - y) as f64);
    let a = if y == 0 { 0.0 } else { yf * p.ln() };
    let b = if y == n { 0.0 } else { rest * (-p).ln_1p() };
    ln_choose(n, y) + a + b
}

/// Beta-binomial with mean proportion `pi` and dispersion `sigma`; shapes
/// are `pi / sigma` and `(1 - pi) / sigma`, and `sigma = 0` is the binomial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBinParams {
    pub size: u64,
    pub pi: f64,
    pub sigma: f64,
}

impl BetaBinParams {
    pub fn new(size: u64, pi: f64, sigma: f64) -> Result<Self> {
        if !(pi > 0.0 && pi < 1.0) {
            return param(format!("beta-binomial mean {pi} outside (0, 1)"));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return param(format!("beta-binomial dispersion {sigma} must be >= 0"));
        }
        Ok(Self { size, pi, sigma })
    }

    pub fn mean(&self) -> f64 {
        self.size as f64 * self.pi
    }

    pub fn variance(&self) -> f64 {
        let n = self.size as f64;
        n * self.pi * (1.0 - self.pi) * (1.0 + self.sigma * (n - 1.0) / (self.sigma + 1.0))
    }
}

/// Log beta-binomial mass without support checks.
pub(crate) fn betabin_ln_pmf_unchecked(y: u64, p: &BetaBinParams) -> f64 {
    let n = p.size;
    let (pi, s) = (p.pi, p.sigma);
    if s == 0.0 {
        return binom_ln_pmf(y, n, pi);
    }
    if n <= 5000 {
        // ratio of rising factorials with the common 1/sigma scale cancelled
        let a: f64 = (0..y).map(|j| (pi + j as f64 * s).ln()).sum();
        let b: f64 = (0..n - y).map(|j| (1.0 - pi + j as f64 * s).ln()).sum();
        let c: f64 = (0..n).map(|j| (j as f64 * s).ln_1p()).sum();
        ln_choose(n, y) + a + b - c
    } else {
        let (sa, sb) = (pi / s, (1.0 - pi) / s);
        ln_choose(n, y) + ln_beta(y as f64 + sa, (n - y) as f64 + sb) - ln_beta(sa, sb)
    }
}

pub fn betabin_pmf(y: u64, params: BetaBinParams, log: bool) -> Result<f64> {
    if y > params.size {
        return Err(Error::Data(format!("count {y} exceeds size {}", params.size)));
    }
    let lp = betabin_ln_pmf_unchecked(y, &params);
    Ok(if log { lp } else { lp.exp() })
}

// ---------------------------------------------------------------------------
// Multinomial / Dirichlet-multinomial

pub fn multinom_pmf(y: &[u64], size: u64, prob: &[f64], log: bool) -> Result<f64> {
    if y.len() != prob.len() {
        return Err(Error::Dimension(format!("{} counts for {} probabilities", y.len(), prob.len())));
    }
    if y.iter().sum::<u64>() != size {
        return Err(Error::Data(format!("counts sum to {} not {}", y.iter().sum::<u64>(), size)));
    }
    let total: f64 = prob.iter().sum();
    if prob.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-8 {
        return param(format!("probabilities must be nonnegative and sum to 1 (sum {total})"));
    }
    let mut lp = ln_factorial(size);
    for (&yi, &pi) in y.iter().zip(prob) {
        lp -= ln_factorial(yi);
        if yi > 0 {
            lp += yi as f64 * pi.ln();
        }
    }
    Ok(if log { lp } else { lp.exp() })
}

/// Dirichlet-multinomial with concentration vector `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirMultParams {
    pub alpha: Vec<f64>,
    pub size: u64,
}

impl DirMultParams {
    pub fn new(alpha: Vec<f64>, size: u64) -> Result<Self> {
        if alpha.len() < 2 || alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return param("Dirichlet-multinomial needs at least two positive concentrations");
        }
        Ok(Self { alpha, size })
    }
}

pub(crate) fn dirmult_ln_pmf_unchecked(y: &[u64], alpha: &[f64], size: u64) -> f64 {
    let total: f64 = alpha.iter().sum();
    let mut lp = ln_factorial(size) - ln_rising(total, size);
    for (&yi, &ai) in y.iter().zip(alpha) {
        lp += ln_rising(ai, yi) - ln_factorial(yi);
    }
    lp
}

pub fn dirmult_pmf(y: &[u64], params: &DirMultParams, log: bool) -> Result<f64> {
    if y.len() != params.alpha.len() {
        return Err(Error::Dimension(format!("{} counts for {} concentrations", y.len(), params.alpha.len())));
    }
    if y.iter().sum::<u64>() != params.size {
        return Err(Error::Data(format!("counts sum to {} not {}", y.iter().sum::<u64>(), params.size)));
    }
    let lp = dirmult_ln_pmf_unchecked(y, &params.alpha, params.size);
    Ok(if log { lp } else { lp.exp() })
}

/// All compositions of `size` into `k` nonnegative parts, in lexicographic
/// order.
pub fn compositions(size: u64, k: usize) -> Vec<Vec<u64>> {
    fn rec(left: u64, k: usize, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if k == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in 0..=left {
            cur.push(v);
            rec(left - v, k - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(size, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}
