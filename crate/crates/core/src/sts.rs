//! Surveillance time series: the shared data model every detector consumes.
//!
//! A [`StsFrame`] holds an `n x m` matrix of counts (rows are timepoints,
//! columns are units such as regions or age groups) together with the
//! parallel population, known-outbreak state and, after monitoring, the
//! alarm and upperbound matrices.

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::control::ControlSpec;
use crate::error::{Error, Result};

const UNIX_EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(1970, 1, 1) {
    Some(d) => d,
    None => panic!("invalid epoch"),
};

/// Converts a calendar date to days since 1970-01-01.
pub fn date_to_days(date: NaiveDate) -> i64 {
    (date - UNIX_EPOCH).num_days()
}

/// Converts days since 1970-01-01 back to a calendar date.
pub fn days_to_date(days: i64) -> NaiveDate {
    UNIX_EPOCH + chrono::Duration::days(days)
}

/// ISO-8601 week-numbering year and week of a date.
pub fn iso_week_year(date: NaiveDate) -> (i32, u32) {
    let w = date.iso_week();
    (w.year(), w.week())
}

/// How the rows of a frame are labelled in time.
#[derive(Debug, Clone, PartialEq)]
pub enum EpochSpec {
    /// One calendar date per row.
    Dates(Vec<NaiveDate>),
    /// Rows are labelled `1..=n`.
    Index,
}

/// Direction of aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    /// Sum across units, giving one column.
    Unit,
    /// Sum across time, giving one row.
    Time,
}

/// Multivariate surveillance time series.
#[derive(Debug, Clone, PartialEq)]
pub struct StsFrame {
    observed: DMatrix<u64>,
    // days since 1970-01-01 when `epoch_as_date`, else 1-based indices
    epoch: Vec<i64>,
    epoch_as_date: bool,
    freq: u32,
    start: (i32, u32),
    population: DMatrix<f64>,
    state: DMatrix<bool>,
    alarm: Option<DMatrix<bool>>,
    upperbound: Option<DMatrix<Option<f64>>>,
    multinomial: bool,
    unit_names: Vec<String>,
}

/// Builder for [`StsFrame`]; see [`StsFrame::builder`].
#[derive(Debug, Clone)]
pub struct StsBuilder {
    observed: DMatrix<u64>,
    epoch: EpochSpec,
    freq: u32,
    start: Option<(i32, u32)>,
    population: Option<DMatrix<f64>>,
    state: Option<DMatrix<bool>>,
    multinomial: bool,
    unit_names: Option<Vec<String>>,
}

impl StsBuilder {
    pub fn dates(mut self, dates: Vec<NaiveDate>) -> Self {
        self.epoch = EpochSpec::Dates(dates);
        self
    }

    pub fn epoch(mut self, epoch: EpochSpec) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn freq(mut self, freq: u32) -> Self {
        self.freq = freq;
        self
    }

    pub fn start(mut self, year: i32, epoch_in_year: u32) -> Self {
        self.start = Some((year, epoch_in_year));
        self
    }

    pub fn population(mut self, population: DMatrix<f64>) -> Self {
        self.population = Some(population);
        self
    }

    pub fn state(mut self, state: DMatrix<bool>) -> Self {
        self.state = Some(state);
        self
    }

    /// Rows are category counts and `population` carries per-row totals.
    pub fn multinomial(mut self, on: bool) -> Self {
        self.multinomial = on;
        self
    }

    pub fn unit_names<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.unit_names = Some(names.into_iter().map(Into::into).collect());
        self
    }

    pub fn build(self) -> Result<StsFrame> {
        let (n, m) = self.observed.shape();
        if n == 0 || m == 0 {
            return Err(Error::Dimension("observed must have at least one row and one column".into()));
        }
        if self.freq == 0 {
            return Err(Error::Parameter("freq must be positive".into()));
        }
        let (epoch, epoch_as_date) = match &self.epoch {
            EpochSpec::Dates(d) => {
                if d.len() != n {
                    return Err(Error::Dimension(format!("{} epochs for {} rows", d.len(), n)));
                }
                (d.iter().map(|&x| date_to_days(x)).collect::<Vec<_>>(), true)
            }
            EpochSpec::Index => ((1..=n as i64).collect(), false),
        };
        let start = match (self.start, &self.epoch) {
            (Some(s), _) => s,
            (None, EpochSpec::Dates(d)) if self.freq == 52 => iso_week_year(d[0]),
            (None, EpochSpec::Dates(d)) if self.freq == 12 => (d[0].year(), d[0].month()),
            (None, EpochSpec::Dates(d)) if self.freq == 365 => (d[0].year(), d[0].ordinal()),
            _ => (1, 1),
        };
        let unit_names = match self.unit_names {
            Some(names) if names.len() != m => {
                return Err(Error::Dimension(format!("{} unit names for {} columns", names.len(), m)))
            }
            Some(names) => names,
            None => (1..=m).map(|i| format!("unit{i}")).collect(),
        };
        let population = self.population.unwrap_or_else(|| DMatrix::from_element(n, m, 1.0));
        let state = self.state.unwrap_or_else(|| DMatrix::from_element(n, m, false));
        let frame = StsFrame {
            observed: self.observed,
            epoch,
            epoch_as_date,
            freq: self.freq,
            start,
            population,
            state,
            alarm: None,
            upperbound: None,
            multinomial: self.multinomial,
            unit_names,
        };
        frame.validate()?;
        Ok(frame)
    }
}

impl StsFrame {
    pub fn builder(observed: DMatrix<u64>) -> StsBuilder {
        StsBuilder {
            observed,
            epoch: EpochSpec::Index,
            freq: 52,
            start: None,
            population: None,
            state: None,
            multinomial: false,
            unit_names: None,
        }
    }

    /// Constructs and validates a frame with default population and state.
    pub fn new(observed: DMatrix<u64>, epoch: EpochSpec, freq: u32, start: (i32, u32)) -> Result<Self> {
        Self::builder(observed).epoch(epoch).freq(freq).start(start.0, start.1).build()
    }

    fn validate(&self) -> Result<()> {
        let shape = self.observed.shape();
        if self.population.shape() != shape {
            return Err(Error::Dimension(format!(
                "population is {:?}, observed is {:?}",
                self.population.shape(),
                shape
            )));
        }
        if self.state.shape() != shape {
            return Err(Error::Dimension(format!("state is {:?}, observed is {:?}", self.state.shape(), shape)));
        }
        if let Some(a) = &self.alarm {
            if a.shape() != shape {
                return Err(Error::Dimension("alarm shape differs from observed".into()));
            }
        }
        if let Some(u) = &self.upperbound {
            if u.shape() != shape {
                return Err(Error::Dimension("upperbound shape differs from observed".into()));
            }
        }
        if self.epoch.len() != shape.0 {
            return Err(Error::Dimension("epoch length differs from row count".into()));
        }
        if self.start.1 == 0 || self.start.1 > self.freq.max(53) {
            return Err(Error::Parameter(format!("start epoch {} outside 1..={}", self.start.1, self.freq)));
        }
        for w in self.epoch.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Epoch(format!("epochs not strictly increasing at {} -> {}", w[0], w[1])));
            }
            if self.epoch_as_date {
                check_gap(days_to_date(w[0]), days_to_date(w[1]), self.freq)?;
            }
        }
        for (r, row) in self.population.row_iter().enumerate() {
            for (c, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::Data(format!("population at row {}, column {} is {}", r + 1, c + 1, p)));
                }
                if p == 0.0 && !self.multinomial {
                    return Err(Error::Data(format!("zero population at row {}, column {}", r + 1, c + 1)));
                }
            }
        }
        if self.multinomial {
            for r in 0..shape.0 {
                let total: u64 = self.observed.row(r).iter().sum();
                for c in 0..shape.1 {
                    if self.population[(r, c)] != total as f64 {
                        return Err(Error::Data(format!(
                            "row {} sums to {} but total is {}",
                            r + 1,
                            total,
                            self.population[(r, c)]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.observed.nrows()
    }

    pub fn m(&self) -> usize {
        self.observed.ncols()
    }

    pub fn observed(&self) -> &DMatrix<u64> {
        &self.observed
    }

    /// Counts of one unit as a vector.
    pub fn column(&self, unit: usize) -> Vec<u64> {
        self.observed.column(unit).iter().copied().collect()
    }

    pub fn population(&self) -> &DMatrix<f64> {
        &self.population
    }

    pub fn state(&self) -> &DMatrix<bool> {
        &self.state
    }

    pub fn alarm(&self) -> Option<&DMatrix<bool>> {
        self.alarm.as_ref()
    }

    pub fn upperbound(&self) -> Option<&DMatrix<Option<f64>>> {
        self.upperbound.as_ref()
    }

    pub fn freq(&self) -> u32 {
        self.freq
    }

    pub fn start(&self) -> (i32, u32) {
        self.start
    }

    pub fn epoch(&self) -> &[i64] {
        &self.epoch
    }

    pub fn epoch_as_date(&self) -> bool {
        self.epoch_as_date
    }

    pub fn is_multinomial(&self) -> bool {
        self.multinomial
    }

    pub fn unit_names(&self) -> &[String] {
        &self.unit_names
    }

    pub fn unit_index(&self, name: &str) -> Result<usize> {
        self.unit_names
            .iter()
            .position(|u| u == name)
            .ok_or_else(|| Error::UnknownUnit(name.to_string()))
    }

    pub fn date(&self, row: usize) -> Option<NaiveDate> {
        self.epoch_as_date.then(|| days_to_date(self.epoch[row]))
    }

    pub fn dates(&self) -> Option<Vec<NaiveDate>> {
        self.epoch_as_date.then(|| self.epoch.iter().map(|&d| days_to_date(d)).collect())
    }

    /// Per-row totals; in multinomial mode these are the category totals.
    pub fn totals(&self) -> Vec<f64> {
        self.population.column(0).iter().copied().collect()
    }

    /// (year, epoch-within-year) of a row, counted forward from `start`.
    pub fn year_and_epoch(&self, row: usize) -> (i32, u32) {
        if let (Some(d), 52) = (self.date(row), self.freq) {
            return iso_week_year(d);
        }
        let freq = self.freq as i64;
        let offset = self.start.1 as i64 - 1 + row as i64;
        ((self.start.0 as i64 + offset.div_euclid(freq)) as i32, (offset.rem_euclid(freq) + 1) as u32)
    }

    /// Fractional position of a row within its year, in `(0, 1]`.
    ///
    /// Weekly date-based series divide the ISO week by the number of ISO
    /// weeks in that year, so week 53 maps to 1.
    pub fn epoch_in_period(&self, row: usize) -> f64 {
        if let (Some(d), 52) = (self.date(row), self.freq) {
            let (y, w) = iso_week_year(d);
            return w as f64 / iso_weeks_in_year(y) as f64;
        }
        self.year_and_epoch(row).1 as f64 / self.freq as f64
    }

    /// Row indices whose date satisfies `pred` (all rows when index-based).
    pub fn rows_where(&self, pred: impl Fn(NaiveDate) -> bool) -> Vec<usize> {
        (0..self.n()).filter(|&r| self.date(r).map(&pred).unwrap_or(true)).collect()
    }

    pub fn aggregate(&self, by: Aggregate) -> Result<StsFrame> {
        let (n, m) = self.observed.shape();
        let frame = match by {
            Aggregate::Unit => {
                let observed = DMatrix::from_fn(n, 1, |r, _| self.observed.row(r).iter().sum());
                let population = if self.multinomial {
                    DMatrix::from_fn(n, 1, |r, _| self.population[(r, 0)])
                } else {
                    DMatrix::from_fn(n, 1, |r, _| self.population.row(r).iter().sum())
                };
                let state = DMatrix::from_fn(n, 1, |r, _| self.state.row(r).iter().any(|&s| s));
                StsFrame {
                    observed,
                    epoch: self.epoch.clone(),
                    epoch_as_date: self.epoch_as_date,
                    freq: self.freq,
                    start: self.start,
                    population,
                    state,
                    alarm: None,
                    upperbound: None,
                    multinomial: false,
                    unit_names: vec!["overall".to_string()],
                }
            }
            Aggregate::Time => StsFrame {
                observed: DMatrix::from_fn(1, m, |_, c| self.observed.column(c).iter().sum()),
                epoch: vec![self.epoch[0]],
                epoch_as_date: self.epoch_as_date,
                freq: self.freq,
                start: self.start,
                population: DMatrix::from_fn(1, m, |_, c| self.population.column(c).iter().sum()),
                state: DMatrix::from_fn(1, m, |_, c| self.state.column(c).iter().any(|&s| s)),
                alarm: None,
                upperbound: None,
                multinomial: false,
                unit_names: self.unit_names.clone(),
            },
        };
        Ok(frame)
    }

    /// Slices every parallel matrix by 0-based row and unit indices.
    pub fn subset(&self, rows: &[usize], units: &[usize]) -> Result<StsFrame> {
        let (n, m) = self.observed.shape();
        if rows.is_empty() || units.is_empty() {
            return Err(Error::OutOfRange("empty selection".into()));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::OutOfRange(format!("row {} of {}", r + 1, n)));
        }
        if let Some(&c) = units.iter().find(|&&c| c >= m) {
            return Err(Error::OutOfRange(format!("unit {} of {}", c + 1, m)));
        }
        if rows.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::OutOfRange("row selection must be strictly increasing".into()));
        }
        let pick = |r: usize, c: usize| (rows[r], units[c]);
        let (nr, nc) = (rows.len(), units.len());
        let multinomial = self.multinomial && nc == m;
        let frame = StsFrame {
            observed: DMatrix::from_fn(nr, nc, |r, c| self.observed[pick(r, c)]),
            epoch: rows.iter().map(|&r| self.epoch[r]).collect(),
            epoch_as_date: self.epoch_as_date,
            freq: self.freq,
            start: self.year_and_epoch(rows[0]),
            population: DMatrix::from_fn(nr, nc, |r, c| self.population[pick(r, c)]),
            state: DMatrix::from_fn(nr, nc, |r, c| self.state[pick(r, c)]),
            alarm: self.alarm.as_ref().map(|a| DMatrix::from_fn(nr, nc, |r, c| a[pick(r, c)])),
            upperbound: self.upperbound.as_ref().map(|u| DMatrix::from_fn(nr, nc, |r, c| u[pick(r, c)])),
            multinomial,
            unit_names: units.iter().map(|&c| self.unit_names[c].clone()).collect(),
        };
        frame.validate()?;
        Ok(frame)
    }

    /// Resolves unit names to column indices.
    pub fn units_by_name(&self, names: &[&str]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.unit_index(n)).collect()
    }

    pub fn all_units(&self) -> Vec<usize> {
        (0..self.m()).collect()
    }

    pub(crate) fn with_monitoring(mut self, alarm: DMatrix<bool>, upperbound: DMatrix<Option<f64>>) -> Result<Self> {
        self.alarm = Some(alarm);
        self.upperbound = Some(upperbound);
        self.validate()?;
        Ok(self)
    }
}

/// Number of ISO weeks (52 or 53) in an ISO week-numbering year.
pub fn iso_weeks_in_year(year: i32) -> u32 {
    // Dec 28 always lies in the last ISO week of its year.
    NaiveDate::from_ymd_opt(year, 12, 28).map(|d| d.iso_week().week()).unwrap_or(52)
}

fn check_gap(a: NaiveDate, b: NaiveDate, freq: u32) -> Result<()> {
    let gap = (b - a).num_days();
    let ok = match freq {
        52 => gap == 7,
        365 | 366 => gap == 1,
        12 => (28..=31).contains(&gap),
        4 => (89..=92).contains(&gap),
        1 => (365..=366).contains(&gap),
        f => {
            let expected = 365.25 / f as f64;
            (gap as f64 - expected).abs() <= 1.0 + 0.02 * expected
        }
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Epoch(format!("gap of {gap} days between {a} and {b} is inconsistent with freq {freq}")))
    }
}

/// Ordered, validated set of 0-based row indices to monitor.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MonitoringRange(Vec<usize>);

impl MonitoringRange {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::OutOfRange("monitoring range is empty".into()));
        }
        if indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::OutOfRange("monitoring range must be strictly increasing".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(Error::OutOfRange(format!("range index {} beyond {} rows", last + 1, n)));
            }
        }
        Ok(Self(indices))
    }

    /// The final `k` rows of an `n`-row series.
    pub fn last(k: usize, n: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::OutOfRange(format!("cannot monitor last {k} of {n} rows")));
        }
        Self::new((n - k..n).collect(), n)
    }

    /// Rows `from..=to`.
    pub fn span(from: usize, to: usize, n: usize) -> Result<Self> {
        if from > to {
            return Err(Error::OutOfRange(format!("empty span {from}..={to}")));
        }
        Self::new((from..=to).collect(), n)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> usize {
        self.0[0]
    }

    pub(crate) fn check_within(&self, n: usize) -> Result<()> {
        Self::new(self.0.clone(), n).map(|_| ())
    }
}

/// Output of a detector run: the frame restricted to the monitored range
/// with alarm and upperbound filled, a per-timepoint score, and the control
/// used.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveillanceResult {
    pub sts: StsFrame,
    /// `|range| x m` detector statistic.
    pub score: DMatrix<f64>,
    pub control: ControlSpec,
    pub range: MonitoringRange,
    /// Free-form per-timepoint notes (suppressed thresholds, failed fits).
    pub notes: Vec<String>,
}

impl SurveillanceResult {
    pub(crate) fn assemble(
        sts: &StsFrame,
        range: &MonitoringRange,
        units: &[usize],
        alarm: DMatrix<bool>,
        upperbound: DMatrix<Option<f64>>,
        score: DMatrix<f64>,
        control: ControlSpec,
        notes: Vec<String>,
    ) -> Result<Self> {
        let sub = sts.subset(range.indices(), units)?.with_monitoring(alarm, upperbound)?;
        Ok(Self { sts: sub, score, control, range: range.clone(), notes })
    }

    pub fn alarms(&self) -> &DMatrix<bool> {
        self.sts.alarm.as_ref().expect("monitoring result always carries alarms")
    }

    pub fn upperbounds(&self) -> &DMatrix<Option<f64>> {
        self.sts.upperbound.as_ref().expect("monitoring result always carries upperbounds")
    }

    pub fn alarm_count(&self) -> usize {
        self.alarms().iter().filter(|&&a| a).count()
    }
}
