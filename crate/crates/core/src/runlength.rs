//! Distribution of the first alarm time of a CUSUM scheme over a finite
//! horizon, by Markov-chain discretization or by simulation, and threshold
//! calibration against a false-alarm target.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catcusum::{cat_increment, CatFamily};
use crate::dist::{compositions, ln_factorial, nb_pmf, pois_pmf, NegBinParams};
use crate::error::{param, Error, Result};
use crate::glrcusum::{lr_increment, CountModel};

/// Default number of transient states of the Markov approximation.
pub const DEFAULT_STATES: usize = 128;
/// Largest enumerated support per timepoint.
pub const MAX_SUPPORT: usize = 2_000_000;
const TAIL: f64 = 1e-10;

/// Likelihood family of a monitored scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchemeFamily {
    /// Category counts with known totals; alarm when `C > h`.
    Categorical { family: CatFamily, sigma: f64 },
    /// Unbounded counts; alarm when `C >= h`.
    Count { model: CountModel },
}

/// A CUSUM scheme over a finite horizon: per-step in-control and
/// out-of-control parameters plus the parameters data are drawn from.
///
/// Categorical steps carry probability (or concentration) vectors; count
/// steps carry a one-element mean vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CusumScheme {
    pub family: SchemeFamily,
    pub totals: Vec<u64>,
    pub theta0: Vec<Vec<f64>>,
    pub theta1: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
}

impl CusumScheme {
    /// Categorical scheme; data are drawn from `truth`.
    pub fn categorical(
        family: CatFamily,
        sigma: f64,
        totals: Vec<u64>,
        theta0: Vec<Vec<f64>>,
        theta1: Vec<Vec<f64>>,
        truth: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let len = totals.len();
        if theta0.len() != len || theta1.len() != len || truth.len() != len {
            return Err(Error::Dimension("scheme columns differ in length".into()));
        }
        if len == 0 {
            return param("scheme horizon is empty");
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return param("sigma must be nonnegative");
        }
        Ok(Self { family: SchemeFamily::Categorical { family, sigma }, totals, theta0, theta1, truth })
    }

    /// Count scheme with in-control means `mu0`, alternative `mu1` and
    /// data drawn with means `truth`.
    pub fn counts(model: CountModel, mu0: Vec<f64>, mu1: Vec<f64>, truth: Vec<f64>) -> Result<Self> {
        let len = mu0.len();
        if mu1.len() != len || truth.len() != len {
            return Err(Error::Dimension("scheme columns differ in length".into()));
        }
        if len == 0 {
            return param("scheme horizon is empty");
        }
        if mu0.iter().chain(&mu1).chain(&truth).any(|&m| !(m > 0.0 && m.is_finite())) {
            return param("means must be positive");
        }
        let wrap = |v: Vec<f64>| v.into_iter().map(|m| vec![m]).collect();
        Ok(Self {
            family: SchemeFamily::Count { model },
            totals: vec![0; len],
            theta0: wrap(mu0),
            theta1: wrap(mu1),
            truth: wrap(truth),
        })
    }

    pub fn horizon(&self) -> usize {
        self.theta0.len()
    }

    fn alarms(&self, c: f64, h: f64) -> bool {
        match self.family {
            SchemeFamily::Categorical { .. } => c > h,
            SchemeFamily::Count { .. } => c >= h,
        }
    }

    /// Log-likelihood ratio of observation `y` at step `t`.
    pub fn increment(&self, t: usize, y: &[u64]) -> f64 {
        match self.family {
            SchemeFamily::Categorical { family, sigma } => {
                cat_increment(family, sigma, y, self.totals[t], &self.theta0[t], &self.theta1[t])
            }
            SchemeFamily::Count { model } => {
                let mu0 = self.theta0[t][0];
                lr_increment(y[0], mu0, self.theta1[t][0], model.size(mu0))
            }
        }
    }

    /// Support points of the data distribution at step `t` with their
    /// probabilities (count families truncated at `1 - 1e-10`).
    pub fn support(&self, t: usize) -> Result<Vec<(Vec<u64>, f64)>> {
        match self.family {
            SchemeFamily::Categorical { family, sigma } => {
                let n = self.totals[t];
                let k = self.truth[t].len();
                let pts: Vec<Vec<u64>> = if family.is_binary() {
                    (0..=n).map(|y| vec![y, n - y]).collect()
                } else {
                    let size = n_compositions(n, k);
                    if size > MAX_SUPPORT as f64 {
                        return Err(Error::Parameter(format!(
                            "{size:.0} compositions at step {}; use simulation instead",
                            t + 1
                        )));
                    }
                    compositions(n, k)
                };
                Ok(pts
                    .into_iter()
                    .map(|y| {
                        let p = crate::catcusum::cat_log_pmf(family, sigma, &y, n, &self.truth[t]).exp();
                        (y, p)
                    })
                    .collect())
            }
            SchemeFamily::Count { model } => {
                let mu = self.truth[t][0];
                let pmf = |y: u64| -> Result<f64> {
                    Ok(match model.size(mu) {
                        None => pois_pmf(y, mu),
                        Some(nu) => nb_pmf(y, NegBinParams::new(mu, nu)?),
                    })
                };
                let mut out = Vec::new();
                let mut acc = 0.0;
                let mut y = 0u64;
                while acc < 1.0 - TAIL {
                    let p = pmf(y)?;
                    acc += p;
                    out.push((vec![y], p));
                    y += 1;
                    if out.len() > MAX_SUPPORT {
                        return Err(Error::Parameter(format!("count support at step {} is too wide", t + 1)));
                    }
                }
                Ok(out)
            }
        }
    }

    fn increment_law(&self, t: usize) -> Result<Vec<(f64, f64)>> {
        Ok(self.support(t)?.into_iter().map(|(y, p)| (self.increment(t, &y), p)).filter(|x| x.1 > 0.0).collect())
    }

    fn draw<R: Rng>(&self, t: usize, rng: &mut R) -> Vec<u64> {
        let th = &self.truth[t];
        match self.family {
            SchemeFamily::Categorical { family, sigma } => {
                let n = self.totals[t];
                match family {
                    CatFamily::Binomial => {
                        let y = binomial(n, th[0], rng);
                        vec![y, n - y]
                    }
                    CatFamily::BetaBinomial => {
                        let p = if sigma > 0.0 {
                            Beta::new(th[0] / sigma, (1.0 - th[0]) / sigma).expect("valid beta shapes").sample(rng)
                        } else {
                            th[0]
                        };
                        let y = binomial(n, p, rng);
                        vec![y, n - y]
                    }
                    CatFamily::Multinomial => multinomial(n, th, rng),
                    CatFamily::DirichletMultinomial => {
                        let g: Vec<f64> =
                            th.iter().map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng)).collect();
                        let s: f64 = g.iter().sum();
                        let p: Vec<f64> = g.iter().map(|v| v / s).collect();
                        multinomial(n, &p, rng)
                    }
                }
            }
            SchemeFamily::Count { model } => {
                let mu = th[0];
                let lambda = match model.size(mu) {
                    None => mu,
                    Some(nu) => Gamma::new(nu, mu / nu).expect("positive shape").sample(rng),
                };
                let y = if lambda > 0.0 { Poisson::new(lambda).expect("positive rate").sample(rng) as u64 } else { 0 };
                vec![y]
            }
        }
    }
}

fn binomial<R: Rng>(n: u64, p: f64, rng: &mut R) -> u64 {
    if p <= 0.0 || n == 0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid binomial").sample(rng)
    }
}

fn multinomial<R: Rng>(n: u64, p: &[f64], rng: &mut R) -> Vec<u64> {
    let mut left = n;
    let mut rest = 1.0;
    let mut out = Vec::with_capacity(p.len());
    for (i, &pi) in p.iter().enumerate() {
        if i + 1 == p.len() {
            out.push(left);
            break;
        }
        let y = binomial(left, (pi / rest).clamp(0.0, 1.0), rng);
        out.push(y);
        left -= y;
        rest -= pi;
    }
    out
}

fn n_compositions(n: u64, k: usize) -> f64 {
    (ln_factorial(n + k as u64 - 1) - ln_factorial(n) - ln_factorial(k as u64 - 1)).exp()
}

/// How a [`RunLengthCdf`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum RunLengthMethod {
    Markov { states: usize },
    MonteCarlo { n_sims: usize, seed: u64 },
}

/// `cdf[t-1] = P(alarm time <= t)` for `t = 1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLengthCdf {
    pub cdf: Vec<f64>,
    pub method: RunLengthMethod,
}

impl RunLengthCdf {
    /// Probability of an alarm within the horizon.
    pub fn prob(&self) -> f64 {
        *self.cdf.last().expect("non-empty horizon")
    }

    /// Binomial standard error for simulated estimates.
    pub fn std_error(&self) -> Option<f64> {
        match self.method {
            RunLengthMethod::MonteCarlo { n_sims, .. } => {
                let p = self.prob();
                Some((p * (1.0 - p) / n_sims as f64).sqrt())
            }
            RunLengthMethod::Markov { .. } => None,
        }
    }
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return param(format!("threshold must be positive, got {h}"));
    }
    Ok(())
}

fn transition_from_law(law: &[(f64, f64)], h: f64, states: usize, strict: bool) -> DMatrix<f64> {
    let width = h / states as f64;
    let mut p = DMatrix::zeros(states + 1, states + 1);
    for i in 0..states {
        let c = (i as f64 + 0.5) * width;
        for &(inc, prob) in law {
            let next = f64::max(0.0, c + inc);
            let absorbed = if strict { next > h } else { next >= h };
            let j = if absorbed { states } else { ((next / width) as usize).min(states - 1) };
            p[(i, j)] += prob;
        }
    }
    p[(states, states)] = 1.0;
    p
}

/// Transition matrix of step `t` over `states` transient states plus the
/// absorbing alarm state (last row and column).
pub fn transition_matrix(scheme: &CusumScheme, t: usize, h: f64, states: usize) -> Result<DMatrix<f64>> {
    check_h(h)?;
    if states == 0 {
        return param("at least one state is required");
    }
    let strict = matches!(scheme.family, SchemeFamily::Categorical { .. });
    Ok(transition_from_law(&scheme.increment_law(t)?, h, states, strict))
}

/// Markov-chain approximation of the alarm-time distribution.
pub fn runlength_markov(scheme: &CusumScheme, h: f64, states: usize) -> Result<RunLengthCdf> {
    check_h(h)?;
    if states == 0 {
        return param("at least one state is required");
    }
    let laws = (0..scheme.horizon()).map(|t| scheme.increment_law(t)).collect::<Result<Vec<_>>>()?;
    Ok(markov_from_laws(&laws, scheme, h, states))
}

fn markov_from_laws(laws: &[Vec<(f64, f64)>], scheme: &CusumScheme, h: f64, states: usize) -> RunLengthCdf {
    let strict = matches!(scheme.family, SchemeFamily::Categorical { .. });
    let mut dist = vec![0.0; states + 1];
    dist[0] = 1.0;
    let mut cdf = Vec::with_capacity(laws.len());
    for law in laws {
        let p = transition_from_law(law, h, states, strict);
        let mut next = vec![0.0; states + 1];
        for (i, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            for (j, v) in next.iter_mut().enumerate() {
                *v += mass * p[(i, j)];
            }
        }
        dist = next;
        cdf.push(dist[states].min(1.0));
    }
    RunLengthCdf { cdf, method: RunLengthMethod::Markov { states } }
}

/// Stream-split generator for simulation `index`.
pub fn simulation_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Per-step increments indexed by the count in the first category, for
/// binary categorical schemes whose totals are small enough to tabulate.
fn increment_table(scheme: &CusumScheme) -> Option<Vec<Vec<f64>>> {
    let SchemeFamily::Categorical { family, .. } = scheme.family else { return None };
    if !matches!(family, CatFamily::Binomial | CatFamily::BetaBinomial) || scheme.theta0[0].len() != 2 {
        return None;
    }
    if scheme.totals.iter().any(|&n| n > 100_000) {
        return None;
    }
    Some(
        (0..scheme.horizon())
            .map(|t| {
                let n = scheme.totals[t];
                (0..=n).map(|y| scheme.increment(t, &[y, n - y])).collect()
            })
            .collect(),
    )
}

/// Simulated alarm-time distribution; identical output for equal seeds
/// regardless of the thread count.
pub fn runlength_montecarlo(scheme: &CusumScheme, h: f64, n_sims: usize, seed: u64) -> Result<RunLengthCdf> {
    simulate(scheme, h, n_sims, seed, increment_table(scheme).as_deref())
}

fn simulate(scheme: &CusumScheme, h: f64, n_sims: usize, seed: u64, table: Option<&[Vec<f64>]>) -> Result<RunLengthCdf> {
    check_h(h)?;
    if n_sims == 0 {
        return param("at least one simulation is required");
    }
    let horizon = scheme.horizon();
    let times: Vec<Option<usize>> = (0..n_sims)
        .into_par_iter()
        .map(|i| {
            let mut rng = simulation_rng(seed, i as u64);
            let mut c = 0.0;
            for t in 0..horizon {
                let y = scheme.draw(t, &mut rng);
                let inc = match table {
                    Some(tab) => tab[t][y[0] as usize],
                    None => scheme.increment(t, &y),
                };
                c = f64::max(0.0, c + inc);
                if scheme.alarms(c, h) {
                    return Some(t);
                }
            }
            None
        })
        .collect();
    let mut counts = vec![0usize; horizon];
    for t in times.into_iter().flatten() {
        counts[t] += 1;
    }
    let mut acc = 0;
    let cdf = counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / n_sims as f64
        })
        .collect();
    Ok(RunLengthCdf { cdf, method: RunLengthMethod::MonteCarlo { n_sims, seed } })
}

/// Method used by [`calibrate_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMethod {
    Markov { states: usize },
    MonteCarlo { n_sims: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub h: f64,
    pub prob: f64,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Smallest grid value meeting the target, or the largest grid value
    /// when none does.
    pub h_star: f64,
    pub met: bool,
    pub curve: Vec<CurvePoint>,
}

/// False-alarm probability over the scheme's horizon at each `h`.
pub fn probability_curve(h_grid: &[f64], method: CalibrationMethod, scheme: &CusumScheme) -> Result<Vec<CurvePoint>> {
    if h_grid.is_empty() || h_grid.windows(2).any(|w| w[1] <= w[0]) {
        return param("threshold grid must be nonempty and increasing");
    }
    match method {
        CalibrationMethod::Markov { states } => {
            if states == 0 {
                return param("at least one state is required");
            }
            let laws = (0..scheme.horizon()).map(|t| scheme.increment_law(t)).collect::<Result<Vec<_>>>()?;
            h_grid
                .iter()
                .map(|&h| {
                    check_h(h)?;
                    let prob = markov_from_laws(&laws, scheme, h, states).prob();
                    Ok(CurvePoint { h, prob, std_error: None })
                })
                .collect()
        }
        CalibrationMethod::MonteCarlo { n_sims, seed } => {
            let table = increment_table(scheme);
            h_grid
                .iter()
                .map(|&h| {
                    let rl = simulate(scheme, h, n_sims, seed, table.as_deref())?;
                    Ok(CurvePoint { h, prob: rl.prob(), std_error: rl.std_error() })
                })
                .collect()
        }
    }
}

/// Smallest `h` in the grid whose false-alarm probability is at most
/// `target`.
pub fn calibrate_threshold(h_grid: &[f64], target: f64, method: CalibrationMethod, scheme: &CusumScheme) -> Result<Calibration> {
    if !(target > 0.0 && target < 1.0) {
        return param(format!("target probability must lie in (0, 1), got {target}"));
    }
    let curve = probability_curve(h_grid, method, scheme)?;
    let hit = curve.iter().find(|c| c.prob <= target);
    Ok(Calibration {
        h_star: hit.map_or(*h_grid.last().expect("nonempty grid"), |c| c.h),
        met: hit.is_some(),
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catcusum::shift_logit;

    fn binomial_scheme(len: usize) -> CusumScheme {
        let p1 = shift_logit(0.2, 2.0).unwrap();
        CusumScheme::categorical(
            CatFamily::Binomial,
            0.0,
            vec![100; len],
            vec![vec![0.2, 0.8]; len],
            vec![vec![p1, 1.0 - p1]; len],
            vec![vec![0.2, 0.8]; len],
        )
        .unwrap()
    }

    #[test]
    fn rows_are_stochastic() {
        let p = transition_matrix(&binomial_scheme(3), 0, 2.0, 64).unwrap();
        for i in 0..p.nrows() {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-10);
        }
        let counts = CusumScheme::counts(CountModel::Quasi { phi: 2.0 }, vec![4.0], vec![8.0], vec![4.0]).unwrap();
        let p = transition_matrix(&counts, 0, 3.0, 32).unwrap();
        for i in 0..p.nrows() {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn no_shift_no_alarm() {
        let s = CusumScheme::categorical(
            CatFamily::Binomial,
            0.0,
            vec![20; 10],
            vec![vec![0.3, 0.7]; 10],
            vec![vec![0.3, 0.7]; 10],
            vec![vec![0.3, 0.7]; 10],
        )
        .unwrap();
        assert!(runlength_markov(&s, 1.0, 16).unwrap().cdf.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn cdf_is_monotone() {
        let rl = runlength_markov(&binomial_scheme(20), 2.0, 64).unwrap();
        assert!(rl.cdf.windows(2).all(|w| w[1] >= w[0]));
        assert!(rl.prob() > 0.0 && rl.prob() < 1.0);
    }

    #[test]
    fn simulation_is_reproducible() {
        let s = binomial_scheme(20);
        let a = runlength_montecarlo(&s, 2.0, 500, 7).unwrap();
        let b = runlength_montecarlo(&s, 2.0, 500, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(runlength_montecarlo(&s, 1e6, 200, 7).unwrap().prob(), 0.0);
    }

    #[test]
    fn calibration_reports_unmet_target() {
        let s = binomial_scheme(20);
        let cal = calibrate_threshold(&[0.1, 0.2], 1e-6, CalibrationMethod::Markov { states: 32 }, &s).unwrap();
        assert!(!cal.met);
        assert_eq!(cal.h_star, 0.2);
        assert!(calibrate_threshold(&[2.0, 1.0], 0.1, CalibrationMethod::Markov { states: 32 }, &s).is_err());
    }

    #[test]
    fn multinomial_draws_sum_to_total() {
        let mut rng = simulation_rng(1, 0);
        for _ in 0..50 {
            let y = multinomial(37, &[0.1, 0.2, 0.3, 0.4], &mut rng);
            assert_eq!(y.iter().sum::<u64>(), 37);
        }
    }
}
