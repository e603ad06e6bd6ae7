//! Detector dispatch and threshold calibration.

use std::path::PathBuf;

use aberrant_core::catcusum::{categorical_cusum, derive_parameters, shift_logit, CatControl, CatFamily, CatModelSpec};
use aberrant_core::ears::{ears_c1, EarsControl};
use aberrant_core::farrington::{farrington_flexible, FarringtonControl};
use aberrant_core::glrcusum::{glrnb, glrpois, CountModel, GlrControl};
use aberrant_core::runlength::{calibrate_threshold, probability_curve, CalibrationMethod, CusumScheme};
use aberrant_core::{Aggregate, MonitoringRange, Ret, StsFrame, SurveillanceResult};
use chrono::NaiveDate;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::config::{MethodName, RangeSpec, RunConfig, SchemeSpec};
use crate::error::{CliError, CliResult};
use crate::io::{read_matrix, read_multinomial_csv, read_sts_csv, result_rows, CalibrationRow, CsvMeta, OutputRow};

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Loads the configured input, applying unit selection and aggregation.
pub fn load_frame(cfg: &RunConfig) -> CliResult<StsFrame> {
    let meta = CsvMeta { freq: cfg.freq, start: cfg.start };
    let multinomial = cfg.multinomial || cfg.algorithm.as_deref() == Some("categoricalCUSUM");
    if multinomial {
        if cfg.units.is_some() || cfg.aggregate.is_some() || cfg.population.is_some() {
            return Err(CliError::Config("`units`, `aggregate` and `population` do not apply to multinomial input".into()));
        }
        return read_multinomial_csv(cfg.input()?, meta);
    }
    let mut sts = read_sts_csv(cfg.input()?, cfg.population.as_deref(), meta)?;
    if let Some(names) = &cfg.units {
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let cols = sts.units_by_name(&refs).map_err(config_err)?;
        let rows: Vec<usize> = (0..sts.n()).collect();
        sts = sts.subset(&rows, &cols)?;
    }
    match cfg.aggregate {
        Some(Aggregate::Unit) => sts = sts.aggregate(Aggregate::Unit)?,
        Some(Aggregate::Time) => return Err(CliError::Config("only unit aggregation can be monitored".into())),
        None => {}
    }
    Ok(sts)
}

/// 0-based monitoring range of `sts`.
pub fn resolve_range(spec: &RangeSpec, sts: &StsFrame) -> CliResult<MonitoringRange> {
    let n = sts.n();
    match spec {
        RangeSpec::Last(k) => MonitoringRange::last(*k, n).map_err(config_err),
        RangeSpec::Indices(idx) => {
            if idx.contains(&0) {
                return Err(CliError::Config("range indices are 1-based".into()));
            }
            MonitoringRange::new(idx.iter().map(|i| i - 1).collect(), n).map_err(config_err)
        }
        RangeSpec::Dates { from, to } => {
            let parse = |s: &str| {
                NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| CliError::Config(format!("invalid date `{s}`")))
            };
            let (a, b) = (parse(from)?, parse(to)?);
            if sts.dates().is_none() {
                return Err(CliError::Config("date ranges need date-based input".into()));
            }
            let rows = sts.rows_where(|d| d >= a && d <= b);
            MonitoringRange::new(rows, n).map_err(|_| CliError::Config(format!("no rows between {from} and {to}")))
        }
    }
}

fn typed_control<T: DeserializeOwned>(params: &Map<String, Value>, range: &MonitoringRange) -> CliResult<T> {
    let mut obj = params.clone();
    obj.insert("range".into(), serde_json::to_value(range).expect("range serializes"));
    serde_json::from_value(Value::Object(obj)).map_err(config_err)
}

/// Accepts `S`, `trend` and `refit` at the top level of a CUSUM control as
/// shorthand for the in-control model.
fn lift_mu0(params: &Map<String, Value>) -> Map<String, Value> {
    let mut out = params.clone();
    let keys = ["S", "trend", "refit"];
    if !out.contains_key("mu0") && keys.iter().any(|k| out.contains_key(*k)) {
        let mut mu0 = Map::new();
        for k in keys {
            if let Some(v) = out.remove(k) {
                mu0.insert(k.into(), v);
            }
        }
        out.insert("mu0".into(), Value::Object(mu0));
    }
    out
}

enum Detector {
    Ears(EarsControl),
    Farrington(FarringtonControl),
    Glr { control: GlrControl, poisson: bool },
}

impl Detector {
    fn build(algorithm: &str, params: &Map<String, Value>, range: &MonitoringRange) -> CliResult<Self> {
        Ok(match algorithm {
            "earsC1" => Detector::Ears(typed_control(params, range)?),
            "farringtonFlexible" => Detector::Farrington(typed_control(params, range)?),
            "glrnb" | "glrpois" => Detector::Glr {
                control: typed_control(&lift_mu0(params), range)?,
                poisson: algorithm == "glrpois",
            },
            other => unreachable!("{other} is dispatched elsewhere"),
        })
    }

    fn run(&self, sts: &StsFrame) -> aberrant_core::Result<SurveillanceResult> {
        match self {
            Detector::Ears(c) => ears_c1(sts, c),
            Detector::Farrington(c) => farrington_flexible(sts, c),
            Detector::Glr { control, poisson: false } => glrnb(sts, control).map(|r| r.0),
            Detector::Glr { control, poisson: true } => glrpois(sts, control).map(|r| r.0),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatParams {
    h: f64,
    #[serde(default)]
    family: Option<CatFamily>,
    #[serde(default)]
    sigma: Option<f64>,
    #[serde(default)]
    ret: Ret,
    #[serde(default)]
    pi0: Option<PathBuf>,
    #[serde(default)]
    pi1: Option<PathBuf>,
    #[serde(default)]
    model: Option<CatModelSpec>,
}

fn categorical_control(params: &Map<String, Value>, sts: &StsFrame, range: &MonitoringRange) -> CliResult<CatControl> {
    let p: CatParams = serde_json::from_value(Value::Object(params.clone())).map_err(config_err)?;
    let (family, pi0, pi1, sigma) = match (&p.model, &p.pi0, &p.pi1) {
        (Some(model), None, None) => {
            if p.family.is_some_and(|f| f != model.family) {
                return Err(CliError::Config("`family` disagrees with `model.family`".into()));
            }
            let d = derive_parameters(sts, range, model)?;
            (model.family, d.pi0, d.pi1, p.sigma.or(d.sigma))
        }
        (None, Some(a), Some(b)) => {
            let family = p.family.ok_or_else(|| CliError::Config("`family` is required with pi0/pi1 matrices".into()))?;
            (family, read_matrix(a)?, read_matrix(b)?, p.sigma)
        }
        _ => return Err(CliError::Config("give either `model` or both `pi0` and `pi1`".into())),
    };
    Ok(CatControl { range: range.clone(), h: p.h, pi0, pi1, family, sigma, ret: p.ret })
}

/// Outcome of a detection run.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutcome {
    /// Output rows in unit order, then time order.
    pub rows: Vec<OutputRow>,
    /// (unit, message) for each series that failed.
    pub failures: Vec<(String, String)>,
    pub notes: Vec<String>,
}

impl DetectOutcome {
    pub fn alarm_count(&self) -> usize {
        self.rows.iter().filter(|r| r.alarm).count()
    }
}

fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} worker threads: {e}")))
}

/// Runs the configured detector. Univariate detectors run once per unit
/// on up to `jobs` threads; results are merged in unit order.
pub fn run_detect(cfg: &RunConfig, jobs: usize) -> CliResult<DetectOutcome> {
    let algorithm = cfg.algorithm()?;
    let sts = load_frame(cfg)?;
    let range = resolve_range(cfg.range()?, &sts)?;
    if algorithm == "categoricalCUSUM" {
        let control = categorical_control(&cfg.control, &sts, &range)?;
        let (res, _) = categorical_cusum(&sts, &control)?;
        return Ok(DetectOutcome { rows: result_rows(&res), failures: vec![], notes: res.notes });
    }
    let detector = Detector::build(algorithm, &cfg.control, &range)?;
    let rows: Vec<usize> = (0..sts.n()).collect();
    let per_unit: Vec<(String, aberrant_core::Result<SurveillanceResult>)> = thread_pool(jobs)?.install(|| {
        (0..sts.m())
            .into_par_iter()
            .map(|u| {
                let name = sts.unit_names()[u].clone();
                let res = sts.subset(&rows, &[u]).and_then(|one| detector.run(&one));
                (name, res)
            })
            .collect()
    });
    let mut out = DetectOutcome { rows: vec![], failures: vec![], notes: vec![] };
    let mut param_failures = 0;
    for (name, res) in per_unit {
        match res {
            Ok(r) => {
                out.rows.extend(result_rows(&r));
                out.notes.extend(r.notes.iter().map(|n| format!("{name}: {n}")));
            }
            Err(e) => {
                if matches!(e, aberrant_core::Error::Parameter(_)) {
                    param_failures += 1;
                }
                out.failures.push((name, e.to_string()));
            }
        }
    }
    if out.rows.is_empty() {
        let msg: Vec<String> = out.failures.iter().map(|(u, e)| format!("  {u}: {e}")).collect();
        return Err(if param_failures == out.failures.len() {
            CliError::Config(msg.join("\n"))
        } else {
            CliError::AllFailed(msg.join("\n"))
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Calibration

fn binary_columns(pi: &[f64]) -> Vec<Vec<f64>> {
    pi.iter().map(|&p| vec![p, 1.0 - p]).collect()
}

/// Builds the monitored scheme described by the calibration section.
pub fn build_scheme(cfg: &RunConfig, spec: &SchemeSpec) -> CliResult<CusumScheme> {
    let scheme = match spec {
        SchemeSpec::Binomial { size, pi0, r, horizon } | SchemeSpec::Betabinomial { size, pi0, r, horizon, .. } => {
            let (family, sigma) = match spec {
                SchemeSpec::Betabinomial { sigma, .. } => (CatFamily::BetaBinomial, *sigma),
                _ => (CatFamily::Binomial, 0.0),
            };
            let p0 = pi0.expand(*horizon, "pi0")?;
            let p1 = p0.iter().map(|&p| shift_logit(p, *r)).collect::<aberrant_core::Result<Vec<_>>>()?;
            let theta0 = binary_columns(&p0);
            CusumScheme::categorical(family, sigma, size.expand(*horizon, "size")?, theta0.clone(), binary_columns(&p1), theta0)
        }
        SchemeSpec::Multinomial { size, pi0, pi1, horizon } => CusumScheme::categorical(
            CatFamily::Multinomial,
            0.0,
            size.expand(*horizon, "size")?,
            vec![pi0.clone(); *horizon],
            vec![pi1.clone(); *horizon],
            vec![pi0.clone(); *horizon],
        ),
        SchemeSpec::Dirichletmultinomial { size, alpha0, alpha1, horizon } => CusumScheme::categorical(
            CatFamily::DirichletMultinomial,
            0.0,
            size.expand(*horizon, "size")?,
            vec![alpha0.clone(); *horizon],
            vec![alpha1.clone(); *horizon],
            vec![alpha0.clone(); *horizon],
        ),
        SchemeSpec::Poisson { mu0, theta, horizon } | SchemeSpec::Negbin { mu0, theta, horizon, .. } => {
            let model = match spec {
                SchemeSpec::Negbin { phi, .. } if *phi > 1.0 => CountModel::Quasi { phi: *phi },
                SchemeSpec::Negbin { phi, .. } if *phi < 1.0 => {
                    return Err(CliError::Config(format!("phi must be at least 1, got {phi}")))
                }
                _ => CountModel::Poisson,
            };
            let m0 = mu0.expand(*horizon, "mu0")?;
            let m1 = m0.iter().map(|m| m * theta.exp()).collect();
            CusumScheme::counts(model, m0.clone(), m1, m0)
        }
        SchemeSpec::Fitted { model } => {
            let mut data_cfg = cfg.clone();
            data_cfg.multinomial = true;
            let sts = load_frame(&data_cfg)?;
            let range = resolve_range(cfg.range()?, &sts)?;
            let d = derive_parameters(&sts, &range, model)?;
            let totals = range.indices().iter().map(|&t| sts.totals()[t].round() as u64).collect();
            CusumScheme::categorical(model.family, d.sigma.unwrap_or(0.0), totals, d.pi0.clone(), d.pi1, d.pi0)
        }
    };
    scheme.map_err(config_err)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub rows: Vec<CalibrationRow>,
    pub h_star: f64,
    pub met: bool,
    /// Method the choice of `h_star` is based on.
    pub chosen_by: MethodName,
}

/// Evaluates the false-alarm probability over the grid with each requested
/// method and picks the smallest threshold meeting the target.
pub fn run_calibrate(cfg: &RunConfig, seed: u64, jobs: usize) -> CliResult<CalibrationOutcome> {
    let spec = cfg.calibration.as_ref().ok_or_else(|| CliError::Config("`calibration` section is required".into()))?;
    if spec.methods.is_empty() {
        return Err(CliError::Config("at least one calibration method is required".into()));
    }
    let grid = spec.grid.values()?;
    let scheme = build_scheme(cfg, &spec.scheme)?;
    let method = |m: MethodName| match m {
        MethodName::Markov => CalibrationMethod::Markov { states: spec.states },
        MethodName::Montecarlo => CalibrationMethod::MonteCarlo { n_sims: spec.n_sims, seed },
    };
    let chosen_by = if spec.methods.contains(&MethodName::Markov) { MethodName::Markov } else { MethodName::Montecarlo };
    thread_pool(jobs)?.install(|| {
        let cal = calibrate_threshold(&grid, spec.target, method(chosen_by), &scheme).map_err(config_err)?;
        let other = match spec.methods.iter().find(|&&m| m != chosen_by) {
            Some(&m) => Some(probability_curve(&grid, method(m), &scheme)?),
            None => None,
        };
        let (markov, mc) = match chosen_by {
            MethodName::Markov => (Some(&cal.curve), other.as_ref()),
            MethodName::Montecarlo => (None, Some(&cal.curve)),
        };
        let rows = grid
            .iter()
            .enumerate()
            .map(|(i, &h)| CalibrationRow {
                h,
                prob_markov: markov.map(|c| c[i].prob),
                prob_mc: mc.map(|c| c[i].prob),
                mc_se: mc.and_then(|c| c[i].std_error),
            })
            .collect();
        Ok(CalibrationOutcome { rows, h_star: cal.h_star, met: cal.met, chosen_by })
    })
}
