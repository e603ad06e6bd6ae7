use aberrant_core::catcusum::{cat_increment, cat_log_pmf, categorical_cusum, shift_logit, CatControl, CatFamily};
use aberrant_core::cusum::cusum_path;
use aberrant_core::dist::{compositions, pois_pmf};
use aberrant_core::glrcusum::{cases_needed_lr, glrnb, lr_increment, GlrControl, Mu0Spec};
use aberrant_core::sts::EpochSpec;
use aberrant_core::{DMatrix, MonitoringRange, Ret, StsFrame};
use proptest::prelude::*;

/// `max(0, max_t sum_{s=t}^{t0} inc_s)` for every prefix end `t0`.
fn max_over_start(inc: &[f64]) -> Vec<f64> {
    (0..inc.len())
        .map(|t0| (0..=t0).map(|t| inc[t..=t0].iter().sum::<f64>()).fold(0.0, f64::max))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    // Increments on a 1/1024 grid keep every partial sum exact.
    #[test]
    fn recursion_equals_max_over_start_exactly(raw in prop::collection::vec(-8192i32..8192, 1..=50)) {
        let inc: Vec<f64> = raw.iter().map(|&v| v as f64 / 1024.0).collect();
        prop_assert_eq!(cusum_path(&inc), max_over_start(&inc));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn recursion_matches_max_over_start_on_reals(inc in prop::collection::vec(-5.0f64..5.0, 1..=50)) {
        for (a, b) in cusum_path(&inc).iter().zip(max_over_start(&inc)) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(*a >= 0.0);
        }
    }

    #[test]
    fn cases_needed_sandwich(
        mu0 in 0.05f64..50.0,
        kappa in 0.05f64..2.0,
        size in prop::option::of(0.3f64..50.0),
        c_arl in 0.5f64..10.0,
        frac in 0.0f64..1.0,
    ) {
        let c = frac * c_arl;
        let out = cases_needed_lr(mu0, kappa, size, c_arl, c);
        prop_assert!(!out.saturated);
        let mu1 = mu0 * kappa.exp();
        let stat = |y: u64| f64::max(0.0, c + lr_increment(y, mu0, mu1, size));
        prop_assert!(stat(out.cases) >= c_arl);
        if out.cases > 0 {
            prop_assert!(stat(out.cases - 1) < c_arl);
        }
    }
}

#[test]
fn cases_needed_poisson_anchor() {
    let out = cases_needed_lr(1.0, std::f64::consts::LN_2, None, 4.0, 0.0);
    assert_eq!(out.cases, 8);
}

#[test]
fn lr_increment_matches_log_density_ratio() {
    for y in 0..30u64 {
        let direct = (pois_pmf(y, 6.0) / pois_pmf(y, 3.0)).ln();
        assert!((lr_increment(y, 3.0, 6.0, None) - direct).abs() < 1e-10);
    }
}

#[test]
fn glr_statistic_is_nonnegative_and_resets() {
    let mut y = vec![3u64; 40];
    for v in &mut y[25..32] {
        *v = 12;
    }
    let sts = StsFrame::new(DMatrix::from_column_slice(40, 1, &y), EpochSpec::Index, 52, (2000, 1)).unwrap();
    let mut ctl = GlrControl::new(MonitoringRange::span(10, 39, 40).unwrap(), 3.0);
    ctl.mu0 = Mu0Spec::Values { values: vec![3.0; 30], size: None };
    let (res, traces) = glrnb(&sts, &ctl).unwrap();
    assert!(traces[0].statistic.iter().all(|&c| c >= 0.0));
    assert!(res.alarm_count() > 0);
    let first = traces[0].alarm_times[0];
    assert!(first >= 15, "first alarm at monitored index {first}");
}

// ---------------------------------------------------------------------------
// Categorical CUSUM

fn binary_frame(y: &[u64], n: u64) -> StsFrame {
    let obs = DMatrix::from_fn(y.len(), 2, |r, c| if c == 0 { y[r] } else { n - y[r] });
    StsFrame::builder(obs)
        .freq(52)
        .population(DMatrix::from_element(y.len(), 2, n as f64))
        .multinomial(true)
        .build()
        .unwrap()
}

fn binary_control(len: usize, pi0: f64, pi1: f64, h: f64, family: CatFamily) -> CatControl {
    CatControl {
        range: MonitoringRange::span(0, len - 1, len).unwrap(),
        h,
        pi0: vec![vec![pi0, 1.0 - pi0]; len],
        pi1: vec![vec![pi1, 1.0 - pi1]; len],
        family,
        sigma: (family == CatFamily::BetaBinomial).then_some(0.1),
        ret: Ret::Value,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn identical_models_never_alarm(y in prop::collection::vec(0u64..=40, 1..40), pi in 0.05f64..0.95) {
        let sts = binary_frame(&y, 40);
        let ctl = binary_control(y.len(), pi, pi, 0.5, CatFamily::BetaBinomial);
        let (res, trace) = categorical_cusum(&sts, &ctl).unwrap();
        prop_assert!(trace.statistic.iter().all(|&c| c == 0.0));
        prop_assert_eq!(res.alarm_count(), 0);
    }

    #[test]
    fn statistic_resets_after_each_alarm(y in prop::collection::vec(0u64..=30, 1..50), h in 0.5f64..4.0) {
        let sts = binary_frame(&y, 30);
        let p1 = shift_logit(0.2, 2.0).unwrap();
        let ctl = binary_control(y.len(), 0.2, p1, h, CatFamily::Binomial);
        let (_, trace) = categorical_cusum(&sts, &ctl).unwrap();
        let mut c = 0.0;
        for (t, &yt) in y.iter().enumerate() {
            c = f64::max(0.0, c + cat_increment(CatFamily::Binomial, 0.0, &[yt, 30 - yt], 30, &[0.2, 0.8], &[p1, 1.0 - p1]));
            prop_assert!((trace.statistic[t] - c).abs() < 1e-12);
            let fired = c > h;
            prop_assert_eq!(trace.alarm_times.contains(&t), fired);
            if fired {
                c = 0.0;
            }
        }
    }

    #[test]
    fn swapping_categories_gives_same_alarms(y in prop::collection::vec(0u64..=25, 1..40), pi0 in 0.1f64..0.9, r in 1.2f64..4.0) {
        let n = 25;
        let pi1 = shift_logit(pi0, r).unwrap();
        let a = categorical_cusum(&binary_frame(&y, n), &binary_control(y.len(), pi0, pi1, 1.5, CatFamily::Binomial)).unwrap().1;
        let flipped: Vec<u64> = y.iter().map(|v| n - v).collect();
        let b = categorical_cusum(
            &binary_frame(&flipped, n),
            &binary_control(y.len(), 1.0 - pi0, 1.0 - pi1, 1.5, CatFamily::Binomial),
        )
        .unwrap()
        .1;
        prop_assert_eq!(a.alarm_times, b.alarm_times);
    }

    #[test]
    fn cases_output_is_sandwiched(y in prop::collection::vec(0u64..=20, 1..30), h in 0.5f64..3.0) {
        let n = 20;
        let p1 = shift_logit(0.3, 2.5).unwrap();
        let mut ctl = binary_control(y.len(), 0.3, p1, h, CatFamily::BetaBinomial);
        let (vals, trace) = categorical_cusum(&binary_frame(&y, n), &ctl).unwrap();
        ctl.ret = Ret::Cases;
        let (cases, _) = categorical_cusum(&binary_frame(&y, n), &ctl).unwrap();
        let inc = |v: u64| cat_increment(CatFamily::BetaBinomial, 0.1, &[v, n - v], n, &[0.3, 0.7], &[p1, 1.0 - p1]);
        for t in 0..y.len() {
            let prev = if t == 0 || trace.alarm_times.contains(&(t - 1)) { 0.0 } else { trace.statistic[t - 1] };
            if let Some(ystar) = cases.upperbounds()[(t, 0)] {
                let ystar = ystar as u64;
                prop_assert!(prev + inc(ystar) > h);
                if ystar > 0 {
                    prop_assert!(prev + inc(ystar - 1) <= h);
                }
            }
            prop_assert_eq!(vals.alarms()[(t, 0)], cases.alarms()[(t, 0)]);
        }
    }
}

/// Expected increment under the in-control model, by exact enumeration.
fn expected_increment(family: CatFamily, sigma: f64, n: u64, th0: &[f64], th1: &[f64]) -> f64 {
    compositions(n, th0.len())
        .iter()
        .map(|y| cat_log_pmf(family, sigma, y, n, th0).exp() * cat_increment(family, sigma, y, n, th0, th1))
        .sum()
}

#[test]
fn expected_increment_is_negative_under_null() {
    for n in [1u64, 5, 17, 30] {
        for (pi0, r) in [(0.2, 2.0), (0.5, 0.5), (0.9, 1.1)] {
            let pi1 = shift_logit(pi0, r).unwrap();
            for (fam, s) in [(CatFamily::Binomial, 0.0), (CatFamily::BetaBinomial, 0.3)] {
                let e = expected_increment(fam, s, n, &[pi0, 1.0 - pi0], &[pi1, 1.0 - pi1]);
                assert!(e < 0.0, "{fam:?} n={n} pi0={pi0}: {e}");
            }
        }
        let e = expected_increment(CatFamily::Multinomial, 0.0, n.min(12), &[0.2, 0.3, 0.5], &[0.4, 0.2, 0.4]);
        assert!(e < 0.0);
        let e = expected_increment(CatFamily::DirichletMultinomial, 0.0, n.min(12), &[2.0, 3.0, 5.0], &[4.0, 2.0, 4.0]);
        assert!(e < 0.0);
    }
}

#[test]
fn shift_logit_anchors() {
    assert!((shift_logit(0.5, 2.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((shift_logit(0.25, 3.0).unwrap() - 0.5).abs() < 1e-12);
    for p in [0.01, 0.2, 0.77] {
        assert!((shift_logit(p, 1.0).unwrap() - p).abs() < 1e-12);
    }
}
