//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p aberrant-cli --test acceptance --release`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use aberrant_core::catcusum::{shift_logit, CatFamily};
use aberrant_core::cusum::cusum_path;
use aberrant_core::dist::{
    betabin_pmf, compositions, dirmult_pmf, multinom_pmf, nb_cdf, nb_pmf, nb_quantile, normal_cdf, normal_quantile,
    pois_cdf, pois_pmf, pois_quantile, BetaBinParams, DirMultParams, NegBinParams,
};
use aberrant_core::ears::{ears_c1, EarsControl};
use aberrant_core::farrington::{
    build_reference_design, farrington_flexible, threshold_delta, threshold_muan, threshold_nbplugin,
    FarringtonControl, PowerTrans,
};
use aberrant_core::glrcusum::{cases_needed_lr, lr_increment};
use aberrant_core::regress::{
    betabin_objective, dirmult_objective, fit_dirichlet_multinomial, fit_glm_poisson, fit_multinomial_logit,
    multinomial_objective, predict_categorical, Evaluation,
};
use aberrant_core::runlength::{probability_curve, CalibrationMethod, CusumScheme};
use aberrant_core::sts::EpochSpec;
use aberrant_core::{DMatrix, DVector, DesignMatrix, MonitoringRange, StsFrame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

type Check = Result<String, String>;
/// Name, time budget in seconds, and check.
type Criterion = (&'static str, f64, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn series(y: &[u64]) -> StsFrame {
    StsFrame::new(DMatrix::from_column_slice(y.len(), 1, y), EpochSpec::Index, 52, (2000, 1)).unwrap()
}

// ---------------------------------------------------------------------------

fn ears_anchor() -> Check {
    let mut bounds = Vec::new();
    for (y, expect) in [(8u64, true), (7, false)] {
        let sts = series(&[1, 2, 3, 4, 5, 6, 7, y]);
        let res = ears_c1(&sts, &EarsControl::new(MonitoringRange::new(vec![7], 8).unwrap(), 0.05)).unwrap();
        let u = res.upperbounds()[(0, 0)].unwrap();
        ensure((u - 7.5533).abs() <= 1e-3, || format!("U = {u}"))?;
        ensure(res.alarms()[(0, 0)] == expect, || format!("y = {y}: alarm {}", res.alarms()[(0, 0)]))?;
        bounds.push(u);
    }
    Ok(format!("U = {:.5}; y=8 alarms, y=7 does not", bounds[0]))
}

fn farrington_windows() -> Check {
    let rd = build_reference_design(300, 4, 3, 1, 52, 301).map_err(|e| e.to_string())?;
    ensure(rd.indices.len() == 28, || format!("{} reference indices", rd.indices.len()))?;
    for k in [2, 3] {
        let t0 = 2 * 52 + 3 + 10;
        let rd = build_reference_design(t0, 2, 3, k, 52, t0 + 1).map_err(|e| e.to_string())?;
        ensure(rd.window_sizes() == [7, 7, 4], || format!("noPeriods={k}: windows {:?}", rd.window_sizes()))?;
    }
    Ok("28 indices; windows (7, 7, 4) for noPeriods 2 and 3".into())
}

fn glm_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(515);
    let (mut worst_score, mut worst_coef) = (0.0f64, 0.0f64);
    let mut done = 0;
    while done < 20 {
        let n = rng.random_range(12..=60);
        let p = rng.random_range(1..=5);
        let x = DMatrix::from_fn(n, p, |_, c| if c == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let beta: Vec<f64> = (0..p).map(|c| if c == 0 { 1.5 } else { rng.random_range(-0.6..0.6) }).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eta: f64 = (0..p).map(|c| x[(i, c)] * beta[c]).sum();
                Poisson::new(eta.exp()).unwrap().sample(&mut rng)
            })
            .collect();
        if y.iter().all(|&v| v == 0.0) {
            continue;
        }
        let design = DesignMatrix::new(x.clone(), (0..p).map(|c| format!("x{c}")).collect()).unwrap();
        let fit = fit_glm_poisson(&y, &design, false).map_err(|e| e.to_string())?;
        for c in 0..p {
            let s: f64 = (0..n).map(|i| x[(i, c)] * (y[i] - fit.fitted[i])).sum();
            worst_score = worst_score.max(s.abs());
        }
        let oracle = newton_poisson(&x, &y);
        for c in 0..p {
            worst_coef = worst_coef.max((fit.coefficients[c] - oracle[c]).abs());
        }
        done += 1;
    }
    ensure(worst_score < 1e-6, || format!("score residual {worst_score:e}"))?;
    ensure(worst_coef < 1e-6, || format!("coefficient gap {worst_coef:e}"))?;
    Ok(format!("max |score| {worst_score:.1e}, max coefficient gap {worst_coef:.1e}"))
}

/// Direct Newton ascent on the Poisson log-likelihood.
fn newton_poisson(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let (n, p) = x.shape();
    let ll = |b: &DVector<f64>| (0..n).map(|i| (x.row(i) * b)[0]).zip(y).map(|(e, &v)| v * e - e.exp()).sum::<f64>();
    let mut b = DVector::zeros(p);
    b[0] = (y.iter().sum::<f64>() / n as f64).max(0.1).ln();
    for _ in 0..200 {
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        for i in 0..n {
            let xi = x.row(i).transpose();
            let mu = (x.row(i) * &b)[0].exp();
            g += &xi * (y[i] - mu);
            h += &xi * xi.transpose() * mu;
        }
        let step = h.cholesky().expect("information is positive definite").solve(&g);
        let mut t = 1.0;
        while ll(&(&b + &step * t)) < ll(&b) && t > 1e-12 {
            t *= 0.5;
        }
        b += &step * t;
        if step.amax() * t < 1e-14 {
            break;
        }
    }
    b
}

fn threshold_checks() -> Check {
    // Poisson 0.975 quantile of mean 5 by direct summation.
    let (mut cum, mut q) = (0.0, 0u64);
    let mut term = (-5.0f64).exp();
    loop {
        cum += term;
        if cum >= 0.975 {
            break;
        }
        q += 1;
        term *= 5.0 / q as f64;
    }
    let nb = threshold_nbplugin(5.0, 1.0, 0.025).map_err(|e| e.to_string())?;
    ensure(nb == q as f64 && nb == 10.0, || format!("nbPlugin {nb}, oracle {q}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..1000 {
        let mu: f64 = rng.random_range(0.1..200.0);
        let se = rng.random_range(0.0..1.0);
        let phi = if rng.random_bool(0.3) { 1.0 } else { rng.random_range(1.0..6.0) };
        let a = threshold_muan(mu.ln(), se, phi, 0.05).map_err(|e| e.to_string())?;
        let b = threshold_nbplugin(mu, phi, 0.05).map_err(|e| e.to_string())?;
        ensure(a >= b, || format!("muan {a} < nbPlugin {b} at mu={mu} se={se} phi={phi}"))?;
    }
    for _ in 0..500 {
        let mu = rng.random_range(0.1..100.0);
        let v = rng.random_range(0.0..0.5);
        let phi = rng.random_range(1.0..5.0);
        for pt in [PowerTrans::None, PowerTrans::Twothirds] {
            let d = |m, vv, ph| threshold_delta(m, vv, ph, 0.05, pt).unwrap();
            let base = d(mu, v, phi);
            ensure(d(mu, v, phi + 0.5) > base && d(mu, v + 0.05, phi) > base, || {
                format!("delta not monotone at mu={mu} v={v} phi={phi}")
            })?;
        }
    }
    Ok("nbPlugin = 10; muan >= nbPlugin on 1000 triples; delta monotone".into())
}

/// Seasonal counts drawn as a Gamma mixture of Poissons with dispersion `phi`.
fn seasonal_nb(rng: &mut ChaCha8Rng, n: usize, base: f64, phi: f64) -> (Vec<u64>, Vec<f64>) {
    let mut y = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    for t in 0..n {
        let m = base * (1.0 + 0.5 * (2.0 * std::f64::consts::PI * t as f64 / 52.0).sin());
        let shape = m / (phi - 1.0);
        let lambda = Gamma::new(shape, m / shape).unwrap().sample(rng);
        y.push(Poisson::new(lambda.max(1e-9)).unwrap().sample(rng) as u64);
        mu.push(m);
    }
    (y, mu)
}

fn improved_vs_original() -> Check {
    let n = 6 * 52;
    let monitored = MonitoringRange::span(n - 52, n - 1, n).unwrap();
    let with_range = |json: &str| -> FarringtonControl {
        let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
        v["range"] = serde_json::to_value(&monitored).unwrap();
        serde_json::from_value(v).unwrap()
    };
    let control1 = with_range(
        r#"{"noPeriods": 1, "b": 4, "w": 3, "weightsThreshold": 1,
            "pastWeeksNotIncluded": 3, "pThresholdTrend": 0.05, "thresholdMethod": "delta"}"#,
    );
    let control2 = with_range(
        r#"{"noPeriods": 10, "b": 4, "w": 3, "weightsThreshold": 2.58,
            "pastWeeksNotIncluded": 26, "pThresholdTrend": 1, "thresholdMethod": "nbPlugin"}"#,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut fewer, mut det1, mut det_both) = (0, 0, 0);
    let (mut total1, mut total2) = (0, 0);
    for _ in 0..50 {
        let (mut y, mu) = seasonal_nb(&mut rng, n, 8.0, 2.0);
        let start = rng.random_range(n - 52..n - 3);
        for t in start..start + 3 {
            let sd = (2.0 * mu[t]).sqrt();
            y[t] += Poisson::new(3.0 * sd).unwrap().sample(&mut rng) as u64;
        }
        let sts = series(&y);
        let r1 = farrington_flexible(&sts, &control1).map_err(|e| e.to_string())?;
        let r2 = farrington_flexible(&sts, &control2).map_err(|e| e.to_string())?;
        let (a1, a2) = (r1.alarm_count(), r2.alarm_count());
        total1 += a1;
        total2 += a2;
        fewer += usize::from(a2 <= a1);
        let hit = |r: &aberrant_core::SurveillanceResult| (start..start + 3).any(|t| r.alarms()[(t - (n - 52), 0)]);
        if hit(&r1) {
            det1 += 1;
            det_both += usize::from(hit(&r2));
        }
    }
    let share = fewer as f64 / 50.0;
    let kept = if det1 == 0 { 1.0 } else { det_both as f64 / det1 as f64 };
    let detail = format!(
        "control2 <= control1 alarms on {fewer}/50 series; detected {det_both}/{det1} of control1's outbreaks; \
         alarms {total2} vs {total1}"
    );
    ensure(det1 > 0, || format!("{detail}; control1 detected nothing"))?;
    ensure(share >= 0.8 && kept >= 0.95, || detail.clone())?;
    Ok(detail)
}

fn cusum_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..10_000 {
        let len = rng.random_range(1..=50);
        // Multiples of 2^-10 keep every partial sum exact in binary floating point.
        let inc: Vec<f64> = (0..len).map(|_| rng.random_range(-8192i32..8192) as f64 / 1024.0).collect();
        let brute: Vec<f64> = (0..len)
            .map(|t0| (0..=t0).map(|t| inc[t..=t0].iter().sum::<f64>()).fold(0.0, f64::max))
            .collect();
        let rec = cusum_path(&inc);
        ensure(rec == brute, || format!("sequence {case} differs"))?;
    }
    Ok("10^4 sequences identical".into())
}

fn cases_needed() -> Check {
    let anchor = cases_needed_lr(1.0, std::f64::consts::LN_2, None, 4.0, 0.0).cases;
    ensure(anchor == 8, || format!("anchor gives {anchor}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let mu0 = rng.random_range(0.05..50.0);
        let kappa = rng.random_range(0.05..2.0);
        let size = rng.random_bool(0.5).then(|| rng.random_range(0.3..50.0));
        let c_arl = rng.random_range(0.5..10.0);
        let c = rng.random_range(0.0..1.0) * c_arl;
        let y = cases_needed_lr(mu0, kappa, size, c_arl, c).cases;
        let stat = |v: u64| f64::max(0.0, c + lr_increment(v, mu0, mu0 * kappa.exp(), size));
        ensure(stat(y) >= c_arl && (y == 0 || stat(y - 1) < c_arl), || {
            format!("sandwich fails at mu0={mu0} kappa={kappa} size={size:?} c={c} h={c_arl}: y*={y}")
        })?;
    }
    Ok("anchor 8; sandwich holds on 1000 states".into())
}

fn runlength_cross_validation() -> Check {
    let horizon = 56;
    let p1 = shift_logit(0.2, 2.0).unwrap();
    let scheme = CusumScheme::categorical(
        CatFamily::Binomial,
        0.0,
        vec![100; horizon],
        vec![vec![0.2, 0.8]; horizon],
        vec![vec![p1, 1.0 - p1]; horizon],
        vec![vec![0.2, 0.8]; horizon],
    )
    .map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (0..19).map(|i| 1.0 + 0.5 * i as f64).collect();
    let t = Instant::now();
    let mk = probability_curve(&grid, CalibrationMethod::Markov { states: 128 }, &scheme).map_err(|e| e.to_string())?;
    let markov_time = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let mc = probability_curve(&grid, CalibrationMethod::MonteCarlo { n_sims: 10_000, seed: 1 }, &scheme)
        .map_err(|e| e.to_string())?;
    let mc_time = t.elapsed().as_secs_f64();
    let gap = mk.iter().zip(&mc).map(|(a, b)| (a.prob - b.prob).abs()).fold(0.0, f64::max);
    let detail = format!("max gap {gap:.4}; markov {markov_time:.3}s, monte carlo {mc_time:.3}s");
    ensure(gap < 0.02 && markov_time < mc_time, || detail.clone())?;
    Ok(detail)
}

fn dirichlet_multinomial_draws(rng: &mut ChaCha8Rng, alpha: &[f64], totals: &[u64]) -> DMatrix<u64> {
    let mut out = DMatrix::zeros(totals.len(), alpha.len());
    for (r, &n) in totals.iter().enumerate() {
        let g: Vec<f64> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng)).collect();
        let s: f64 = g.iter().sum();
        let (mut left, mut mass) = (n, 1.0);
        for c in 0..alpha.len() {
            let p = g[c] / s;
            let draw = if c == alpha.len() - 1 || left == 0 {
                left
            } else {
                rand_distr::Binomial::new(left, (p / mass).clamp(0.0, 1.0)).unwrap().sample(rng)
            };
            out[(r, c)] = draw;
            left -= draw;
            mass -= p;
        }
    }
    out
}

fn gradient_gap(f: impl Fn(&DVector<f64>) -> Evaluation, theta: &DVector<f64>) -> f64 {
    let (_, g, _) = f(theta).unwrap();
    let h = 1e-6;
    (0..theta.len())
        .map(|i| {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (f(&up).unwrap().0 - f(&dn).unwrap().0) / (2.0 * h);
            (g[i] - fd).abs()
        })
        .fold(0.0, f64::max)
}

fn categorical_fits() -> Check {
    let counts = DMatrix::from_row_slice(4, 3, &[3u64, 5, 12, 7, 1, 9, 4, 4, 4, 10, 2, 8]);
    let fit = fit_multinomial_logit(&counts, &DesignMatrix::intercept(4), 0).map_err(|e| e.to_string())?;
    let pred = predict_categorical(&fit, &[1.0]).map_err(|e| e.to_string())?;
    let total = counts.iter().sum::<u64>() as f64;
    let prop_gap = (0..3)
        .map(|c| (pred[c] - counts.column(c).iter().sum::<u64>() as f64 / total).abs())
        .fold(0.0, f64::max);
    ensure(prop_gap < 1e-10, || format!("proportion gap {prop_gap:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let totals: Vec<u64> = (0..120).map(|_| rng.random_range(30..120)).collect();
    let draws = dirichlet_multinomial_draws(&mut rng, &[1.5, 2.5, 4.0], &totals);
    let design = DesignMatrix::intercept(totals.len());
    let mn = fit_multinomial_logit(&draws, &design, 0).map_err(|e| e.to_string())?;
    let dm = fit_dirichlet_multinomial(&draws, &design).map_err(|e| e.to_string())?;
    ensure(dm.aic < mn.aic, || format!("AIC: Dirichlet-multinomial {} vs multinomial {}", dm.aic, mn.aic))?;

    let n = 40;
    let x = DMatrix::from_fn(n, 3, |t, c| match c {
        0 => 1.0,
        1 => (2.0 * std::f64::consts::PI * t as f64 / 52.0).cos(),
        _ => (2.0 * std::f64::consts::PI * t as f64 / 52.0).sin(),
    });
    let tot: Vec<u64> = (0..n).map(|_| rng.random_range(5..80)).collect();
    let comp = dirichlet_multinomial_draws(&mut rng, &[2.0, 3.0, 4.0], &tot);
    let y: Vec<u64> = (0..n).map(|r| comp[(r, 0)]).collect();
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let bb = DVector::from_fn(4, |i, _| if i == 3 { rng.random_range(-3.0..0.0) } else { rng.random_range(-1.0..1.0) });
        worst = worst.max(gradient_gap(|t| betabin_objective(&y, &tot, &x, t), &bb));
        let mnt = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        worst = worst.max(gradient_gap(|t| multinomial_objective(&comp, &x, 2, t), &mnt));
        let dmt = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.5));
        worst = worst.max(gradient_gap(|t| dirmult_objective(&comp, &x, t), &dmt));
    }
    ensure(worst < 1e-4, || format!("gradient gap {worst:e}"))?;
    Ok(format!(
        "proportion gap {prop_gap:.1e}; AIC {:.2} < {:.2}; gradient gap {worst:.1e}",
        dm.aic, mn.aic
    ))
}

fn shift_logit_anchors() -> Check {
    let a = shift_logit(0.5, 2.0).unwrap();
    let b = shift_logit(0.25, 3.0).unwrap();
    ensure((a - 2.0 / 3.0).abs() < 1e-12, || format!("(0.5, 2) -> {a}"))?;
    ensure((b - 0.5).abs() < 1e-12, || format!("(0.25, 3) -> {b}"))?;
    for p in [0.01, 0.2, 0.5, 0.77, 0.999] {
        let c = shift_logit(p, 1.0).unwrap();
        ensure((c - p).abs() < 1e-12, || format!("R=1 moves {p} to {c}"))?;
    }
    Ok("2/3, 1/2 and identity within 1e-12".into())
}

fn cli_determinism() -> Check {
    let bin = env!("CARGO_BIN_EXE_aberrant");
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let d = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let start = chrono::NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
    let units: Vec<Vec<u64>> = (0..12).map(|_| seasonal_nb(&mut rng, 300, 6.0, 1.8).0).collect();
    let mut csv = String::from("date");
    for u in 0..units.len() {
        csv.push_str(&format!(",region{u:02}"));
    }
    csv.push('\n');
    for t in 0..300 {
        csv.push_str(&(start + chrono::Duration::weeks(t as i64)).to_string());
        for u in &units {
            csv.push_str(&format!(",{}", u[t]));
        }
        csv.push('\n');
    }
    std::fs::write(d.join("in.csv"), csv).unwrap();
    std::fs::write(
        d.join("detect.json"),
        r#"{"input": "in.csv", "algorithm": "farringtonFlexible",
            "control": {"noPeriods": 10, "b": 4, "w": 3, "weightsThreshold": 2.58,
                        "pastWeeksNotIncluded": 26, "pThresholdTrend": 1, "thresholdMethod": "nbPlugin"},
            "range": {"last": 52}, "output": "detect.csv", "report": {"path": "detect.txt", "format": "text"}}"#,
    )
    .unwrap();
    std::fs::write(
        d.join("glr.json"),
        r#"{"input": "in.csv", "algorithm": "glrnb", "control": {"c_ARL": 4, "theta": 0.7, "S": 1},
            "range": {"last": 52}, "output": "glr.csv"}"#,
    )
    .unwrap();
    std::fs::write(
        d.join("calibrate.json"),
        r#"{"calibration": {"scheme": {"family": "betabinomial", "size": 100, "pi0": 0.2, "R": 2, "sigma": 0.05,
            "horizon": 56}, "grid": {"from": 1, "to": 10, "by": 0.5}, "target": 0.1, "nSims": 2000},
            "output": "calibrate.csv"}"#,
    )
    .unwrap();
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).current_dir(d).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    };
    let snapshot = |files: &[&str]| -> Vec<Vec<u8>> { files.iter().map(|f| std::fs::read(d.join(f)).unwrap()).collect() };
    let mut reference: Option<Vec<Vec<u8>>> = None;
    let files = ["detect.csv", "detect.txt", "glr.csv", "calibrate.csv"];
    for (rep, jobs) in ["1", "8", "1", "8"].iter().enumerate() {
        run(&["--seed", "99", "detect", "--config", "detect.json", "--jobs", jobs])?;
        run(&["--seed", "99", "detect", "--config", "glr.json", "--jobs", jobs])?;
        run(&["--seed", "99", "calibrate", "--config", "calibrate.json", "--jobs", jobs])?;
        let snap = snapshot(&files);
        match &reference {
            None => reference = Some(snap),
            Some(r) => {
                for (i, f) in files.iter().enumerate() {
                    ensure(r[i] == snap[i], || format!("{f} differs on run {} (--jobs {jobs})", rep + 1))?;
                }
            }
        }
    }
    let rows = std::str::from_utf8(&reference.unwrap()[0]).unwrap().lines().count() - 1;
    ensure(rows == 12 * 52, || format!("{rows} detection rows"))?;
    Ok("4 runs x 4 outputs byte-identical across --jobs 1 and 8".into())
}

fn distributions() -> Check {
    let mut worst = 0.0f64;
    for &(n, pi, sigma) in &[(0u64, 0.3, 0.0), (1, 0.5, 0.2), (30, 0.2, 0.0), (30, 0.2, 0.5), (100, 0.07, 3.0)] {
        let p = BetaBinParams::new(n, pi, sigma).unwrap();
        worst = worst.max(((0..=n).map(|y| betabin_pmf(y, p, false).unwrap()).sum::<f64>() - 1.0).abs());
    }
    for (n, prob) in [(6u64, vec![0.2, 0.3, 0.5]), (12, vec![0.1, 0.1, 0.4, 0.4]), (1, vec![0.5, 0.5])] {
        let comps = compositions(n, prob.len());
        worst = worst.max((comps.iter().map(|y| multinom_pmf(y, n, &prob, false).unwrap()).sum::<f64>() - 1.0).abs());
        let dm = DirMultParams::new(prob.iter().map(|p| p * 3.7).collect(), n).unwrap();
        worst = worst.max((comps.iter().map(|y| dirmult_pmf(y, &dm, false).unwrap()).sum::<f64>() - 1.0).abs());
    }
    for &mu in &[0.01, 1.0, 7.5, 40.0] {
        worst = worst.max(((0..2000).map(|y| pois_pmf(y, mu)).sum::<f64>() - 1.0).abs());
        for &nu in &[0.5, 3.0, 100.0] {
            let p = NegBinParams::new(mu, nu).unwrap();
            worst = worst.max(((0..20000).map(|y| nb_pmf(y, p)).sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst < 1e-10, || format!("normalization error {worst:e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10_000 {
        let p = rng.random_range(1e-6..0.999999);
        let mu = rng.random_range(0.05..400.0);
        let q = pois_quantile(p, mu).unwrap();
        ensure(pois_cdf(q, mu) >= p - 1e-12 && (q == 0 || pois_cdf(q - 1, mu) < p + 1e-12), || {
            format!("Poisson({mu}) quantile {q} at p={p}")
        })?;
        let par = NegBinParams::new(mu, rng.random_range(0.1..200.0)).unwrap();
        let q = nb_quantile(p, par).unwrap();
        ensure(nb_cdf(q, par) >= p - 1e-12 && (q == 0 || nb_cdf(q - 1, par) < p + 1e-12), || {
            format!("NB quantile {q} at p={p}")
        })?;
        let z = normal_quantile(p).unwrap();
        ensure((normal_cdf(z) - p).abs() < 1e-12 * p.max(1e-2), || format!("normal quantile at p={p}"))?;
    }
    Ok(format!("normalization error {worst:.1e}; adjointness on 10^4 cases per family"))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("EARS C1 anchor", 1.0, ears_anchor),
        ("reference window layout", f64::INFINITY, farrington_windows),
        ("GLM oracle suite", 10.0, glm_oracle),
        ("threshold cross-checks", f64::INFINITY, threshold_checks),
        ("improved vs original Farrington", 120.0, improved_vs_original),
        ("CUSUM recursion equivalence", f64::INFINITY, cusum_equivalence),
        ("cases needed", f64::INFINITY, cases_needed),
        ("run-length cross-validation", 300.0, runlength_cross_validation),
        ("categorical model fits", f64::INFINITY, categorical_fits),
        ("shift_logit anchors", f64::INFINITY, shift_logit_anchors),
        ("end-to-end determinism", f64::INFINITY, cli_determinism),
        ("distribution suite", f64::INFINITY, distributions),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(d) if secs >= budget => Err(format!("{d}; took {secs:.2}s, budget {budget}s")),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += usize::from(outcome.is_err());
        println!("{tag} criterion {:>2} {name} ({secs:.2}s): {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} of 12 criteria failed");
        std::process::exit(1);
    }
    println!("all 12 criteria passed");
}
