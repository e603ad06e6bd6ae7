use aberrant_core::catcusum::{shift_logit, CatFamily};
use aberrant_core::dist::binom_ln_pmf;
use aberrant_core::glrcusum::CountModel;
use aberrant_core::runlength::{
    calibrate_threshold, runlength_markov, runlength_montecarlo, transition_matrix, CalibrationMethod, CusumScheme,
};

fn binomial_scheme(family: CatFamily, sigma: f64, horizon: usize) -> CusumScheme {
    let p1 = shift_logit(0.2, 2.0).unwrap();
    CusumScheme::categorical(
        family,
        sigma,
        vec![100; horizon],
        vec![vec![0.2, 0.8]; horizon],
        vec![vec![p1, 1.0 - p1]; horizon],
        vec![vec![0.2, 0.8]; horizon],
    )
    .unwrap()
}

fn seasonal_count_scheme(horizon: usize) -> CusumScheme {
    let mu0: Vec<f64> =
        (0..horizon).map(|t| 5.0 * (1.0 + 0.4 * (2.0 * std::f64::consts::PI * t as f64 / 52.0).cos())).collect();
    let mu1 = mu0.iter().map(|m| m * 2.0).collect();
    CusumScheme::counts(CountModel::Quasi { phi: 1.8 }, mu0.clone(), mu1, mu0).unwrap()
}

#[test]
fn markov_converges_as_states_double() {
    let s = binomial_scheme(CatFamily::Binomial, 0.0, 56);
    let a = runlength_markov(&s, 2.0, 64).unwrap();
    let b = runlength_markov(&s, 2.0, 128).unwrap();
    let gap = a.cdf.iter().zip(&b.cdf).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 0.005, "sup gap {gap}");
}

#[test]
fn transition_rows_are_stochastic() {
    let schemes = [
        binomial_scheme(CatFamily::Binomial, 0.0, 3),
        binomial_scheme(CatFamily::BetaBinomial, 0.05, 3),
        seasonal_count_scheme(3),
    ];
    for s in &schemes {
        for t in 0..3 {
            let p = transition_matrix(s, t, 2.5, 100).unwrap();
            for i in 0..p.nrows() {
                assert!((p.row(i).sum() - 1.0).abs() < 1e-9, "row {i} sums to {}", p.row(i).sum());
            }
        }
    }
}

#[test]
fn markov_and_simulation_agree_within_three_standard_errors() {
    let cases = [
        (binomial_scheme(CatFamily::Binomial, 0.0, 56), 2.0),
        (binomial_scheme(CatFamily::BetaBinomial, 0.02, 56), 3.0),
        (seasonal_count_scheme(52), 4.0),
    ];
    for (i, (s, h)) in cases.iter().enumerate() {
        let mk = runlength_markov(s, *h, 128).unwrap();
        let mc = runlength_montecarlo(s, *h, 4000, 99).unwrap();
        let se = mc.std_error().unwrap().max(1e-3);
        assert!((mk.prob() - mc.prob()).abs() < 3.0 * se, "case {i}: markov {} vs simulated {}", mk.prob(), mc.prob());
    }
}

#[test]
fn split_halves_agree_within_sampling_error() {
    let s = binomial_scheme(CatFamily::Binomial, 0.0, 56);
    let a = runlength_montecarlo(&s, 2.0, 3000, 1).unwrap();
    let b = runlength_montecarlo(&s, 2.0, 3000, 2).unwrap();
    let p = 0.5 * (a.prob() + b.prob());
    let se = (p * (1.0 - p) / 3000.0).sqrt();
    assert!((a.prob() - b.prob()).abs() < 3.0 * std::f64::consts::SQRT_2 * se);
}

#[test]
fn calibration_curve_is_nonincreasing() {
    let s = binomial_scheme(CatFamily::Binomial, 0.0, 56);
    let grid: Vec<f64> = (0..19).map(|i| 1.0 + 0.5 * i as f64).collect();
    let cal = calibrate_threshold(&grid, 0.1, CalibrationMethod::Markov { states: 128 }, &s).unwrap();
    assert!(cal.curve.windows(2).all(|w| w[1].prob <= w[0].prob + 1e-12));
    assert!(cal.met);
    let idx = grid.iter().position(|&h| h == cal.h_star).unwrap();
    assert!(cal.curve[idx].prob <= 0.1);
    if idx > 0 {
        assert!(cal.curve[idx - 1].prob > 0.1);
    }
}

#[test]
fn tiny_threshold_absorbs_on_the_first_positive_increment() {
    let p1 = shift_logit(0.2, 2.0).unwrap();
    let s = CusumScheme::categorical(
        CatFamily::Binomial,
        0.0,
        vec![100; 5],
        vec![vec![0.2, 0.8]; 5],
        vec![vec![p1, 1.0 - p1]; 5],
        vec![vec![0.6, 0.4]; 5],
    )
    .unwrap();
    let rl = runlength_markov(&s, 1e-9, 1).unwrap();
    let positive: f64 = (0..=100u64)
        .filter(|&y| s.increment(0, &[y, 100 - y]) > 1e-9)
        .map(|y| binom_ln_pmf(y, 100, 0.6).exp())
        .sum();
    assert!((rl.cdf[0] - positive).abs() < 1e-12);
    assert!(rl.cdf[0] > 0.999);
}
