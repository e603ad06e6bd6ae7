//! JSON run configuration.

use std::path::{Path, PathBuf};

use aberrant_core::catcusum::CatModelSpec;
use aberrant_core::Aggregate;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub const ALGORITHMS: [&str; 5] = ["earsC1", "farringtonFlexible", "glrnb", "glrpois", "categoricalCUSUM"];

/// Which rows to monitor.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub enum RangeSpec {
    /// The final `k` rows.
    Last(usize),
    /// Explicit 1-based row numbers.
    Indices(Vec<usize>),
    /// Rows dated within `from..=to` (ISO dates).
    Dates { from: String, to: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Latex,
    Text,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    pub path: PathBuf,
    pub format: ReportFormat,
}

/// A scalar applied to every step or one value per step.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn expand(&self, horizon: usize, what: &str) -> CliResult<Vec<T>> {
        match self {
            OneOrMany::One(v) => Ok(vec![v.clone(); horizon]),
            OneOrMany::Many(v) if v.len() == horizon => Ok(v.clone()),
            OneOrMany::Many(v) => Err(CliError::Config(format!("{what}: {} values for horizon {horizon}", v.len()))),
        }
    }
}

/// Monitoring scheme whose false-alarm probability is calibrated.
/// Data are drawn from the in-control parameters.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum SchemeSpec {
    Binomial {
        size: OneOrMany<u64>,
        pi0: OneOrMany<f64>,
        #[serde(rename = "R")]
        r: f64,
        horizon: usize,
    },
    Betabinomial {
        size: OneOrMany<u64>,
        pi0: OneOrMany<f64>,
        #[serde(rename = "R")]
        r: f64,
        sigma: f64,
        horizon: usize,
    },
    Multinomial {
        size: OneOrMany<u64>,
        pi0: Vec<f64>,
        pi1: Vec<f64>,
        horizon: usize,
    },
    Dirichletmultinomial {
        size: OneOrMany<u64>,
        alpha0: Vec<f64>,
        alpha1: Vec<f64>,
        horizon: usize,
    },
    Poisson {
        mu0: OneOrMany<f64>,
        theta: f64,
        horizon: usize,
    },
    Negbin {
        mu0: OneOrMany<f64>,
        theta: f64,
        phi: f64,
        horizon: usize,
    },
    /// Categorical model fitted to the rows of `input` before `range`;
    /// the horizon is the range.
    Fitted { model: CatModelSpec },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Values(Vec<f64>),
    Sequence { from: f64, to: f64, by: f64 },
}

impl GridSpec {
    pub fn values(&self) -> CliResult<Vec<f64>> {
        match self {
            GridSpec::Values(v) => Ok(v.clone()),
            GridSpec::Sequence { from, to, by } => {
                if !(*by > 0.0) || to < from {
                    return Err(CliError::Config(format!("grid {from}..{to} by {by} is empty")));
                }
                let steps = ((to - from) / by + 1e-9).floor() as usize;
                Ok((0..=steps).map(|i| from + i as f64 * by).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Markov,
    Montecarlo,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CalibrationSpec {
    pub scheme: SchemeSpec,
    pub grid: GridSpec,
    pub target: f64,
    #[serde(default = "both_methods")]
    pub methods: Vec<MethodName>,
    #[serde(default = "default_states")]
    pub states: usize,
    #[serde(default = "default_sims")]
    pub n_sims: usize,
}

fn both_methods() -> Vec<MethodName> {
    vec![MethodName::Markov, MethodName::Montecarlo]
}

fn default_states() -> usize {
    aberrant_core::runlength::DEFAULT_STATES
}

fn default_sims() -> usize {
    10_000
}

/// A complete batch run. Relative paths are resolved against the directory
/// holding the configuration file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub population: Option<PathBuf>,
    /// Input is `date,total,<category>...`; implied by `categoricalCUSUM`.
    #[serde(default)]
    pub multinomial: bool,
    #[serde(default)]
    pub freq: Option<u32>,
    #[serde(default)]
    pub start: Option<(i32, u32)>,
    /// Restrict to these units, in this order.
    #[serde(default)]
    pub units: Option<Vec<String>>,
    #[serde(default)]
    pub aggregate: Option<Aggregate>,
    #[serde(default)]
    pub range: Option<RangeSpec>,
    #[serde(default)]
    pub algorithm: Option<String>,
    /// Algorithm parameters under their control field names.
    #[serde(default)]
    pub control: Map<String, Value>,
    pub output: PathBuf,
    #[serde(default)]
    pub report: Option<ReportSpec>,
    #[serde(default)]
    pub calibration: Option<CalibrationSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_json(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.input.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.population.as_mut() {
            resolve(p);
        }
        resolve(&mut cfg.output);
        if let Some(r) = cfg.report.as_mut() {
            resolve(&mut r.path);
        }
        for key in ["pi0", "pi1"] {
            if let Some(Value::String(s)) = cfg.control.get_mut(key) {
                let p = Path::new(s.as_str());
                if p.is_relative() {
                    *s = base.join(p).to_string_lossy().into_owned();
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    /// The algorithm name, checked against the supported set.
    pub fn algorithm(&self) -> CliResult<&str> {
        let name = self.algorithm.as_deref().ok_or_else(|| CliError::Config("`algorithm` is required".into()))?;
        if !ALGORITHMS.contains(&name) {
            return Err(CliError::Config(format!("unknown algorithm `{name}`; expected one of {}", ALGORITHMS.join(", "))));
        }
        Ok(name)
    }

    pub fn input(&self) -> CliResult<&Path> {
        self.input.as_deref().ok_or_else(|| CliError::Config("`input` is required".into()))
    }

    pub fn range(&self) -> CliResult<&RangeSpec> {
        self.range.as_ref().ok_or_else(|| CliError::Config("`range` is required".into()))
    }
}
