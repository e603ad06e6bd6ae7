//! CSV ingestion and output.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use aberrant_core::sts::EpochSpec;
use aberrant_core::{DMatrix, StsFrame, SurveillanceResult};
use chrono::NaiveDate;

use crate::error::{CliError, CliResult};

/// Calendar metadata for series whose CSV does not fully determine it.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CsvMeta {
    pub freq: Option<u32>,
    /// (year, epoch within year) of the first row.
    pub start: Option<(i32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
enum TimeColumn {
    Dates(Vec<NaiveDate>),
    Index(usize),
}

struct Table {
    time: TimeColumn,
    names: Vec<String>,
    cells: Vec<Vec<String>>,
    lines: Vec<u64>,
}

fn reader(path: &Path) -> CliResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn read_table(path: &Path) -> CliResult<Table> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| CliError::input(path, format!("header: {e}")))?.clone();
    let first = header.get(0).unwrap_or("");
    let by_date = match first {
        "date" => true,
        "index" => false,
        other => {
            return Err(CliError::input(path, format!("line 1: first column must be `date` or `index`, found `{other}`")))
        }
    };
    if header.len() < 2 {
        return Err(CliError::input(path, "line 1: no data columns"));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if let Some(dup) = names.iter().enumerate().find(|(i, n)| names[..*i].contains(n)) {
        return Err(CliError::input(path, format!("line 1: duplicate column `{}`", dup.1)));
    }
    let mut dates = Vec::new();
    let mut cells = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::input(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(CliError::input(path, format!("line {line}: {} fields, header has {}", rec.len(), header.len())));
        }
        let t = &rec[0];
        if by_date {
            let d = NaiveDate::parse_from_str(t, "%Y-%m-%d")
                .map_err(|_| CliError::input(path, format!("line {line}: invalid date `{t}`")))?;
            dates.push(d);
        } else {
            let idx: usize =
                t.parse().map_err(|_| CliError::input(path, format!("line {line}: invalid index `{t}`")))?;
            if idx != cells.len() + 1 {
                return Err(CliError::input(path, format!("line {line}: index {idx}, expected {}", cells.len() + 1)));
            }
        }
        cells.push(rec.iter().skip(1).map(str::to_string).collect());
        lines.push(line);
    }
    if cells.is_empty() {
        return Err(CliError::input(path, "no data rows"));
    }
    let time = if by_date { TimeColumn::Dates(dates) } else { TimeColumn::Index(cells.len()) };
    Ok(Table { time, names, cells, lines })
}

fn parse_count(path: &Path, line: u64, column: &str, cell: &str) -> CliResult<u64> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
        return Err(CliError::input(path, format!("line {line}, column `{column}`: missing value")));
    }
    match cell.parse::<i64>() {
        Ok(v) if v < 0 => Err(CliError::input(path, format!("line {line}, column `{column}`: negative count {v}"))),
        Ok(v) => Ok(v as u64),
        Err(_) => Err(CliError::input(path, format!("line {line}, column `{column}`: `{cell}` is not a count"))),
    }
}

fn count_matrix(path: &Path, t: &Table, skip: usize) -> CliResult<DMatrix<u64>> {
    let m = t.names.len() - skip;
    let mut out = DMatrix::zeros(t.cells.len(), m);
    for (r, row) in t.cells.iter().enumerate() {
        for c in 0..m {
            out[(r, c)] = parse_count(path, t.lines[r], &t.names[c + skip], &row[c + skip])?;
        }
    }
    Ok(out)
}

fn infer_freq(dates: &[NaiveDate]) -> u32 {
    match dates {
        [a, b, ..] => match (*b - *a).num_days() {
            1 => 365,
            28..=31 => 12,
            _ => 52,
        },
        _ => 52,
    }
}

fn build(path: &Path, t: &Table, observed: DMatrix<u64>, names: &[String], meta: CsvMeta) -> CliResult<aberrant_core::sts::StsBuilder> {
    let mut b = StsFrame::builder(observed).unit_names(names.iter().cloned());
    match &t.time {
        TimeColumn::Dates(d) => {
            b = b.freq(meta.freq.unwrap_or_else(|| infer_freq(d))).dates(d.clone());
        }
        TimeColumn::Index(_) => {
            let (Some(freq), Some(_)) = (meta.freq, meta.start) else {
                return Err(CliError::input(path, "index-based input needs `freq` and `start` in the configuration"));
            };
            b = b.freq(freq).epoch(EpochSpec::Index);
        }
    }
    if let Some((y, e)) = meta.start {
        b = b.start(y, e);
    }
    Ok(b)
}

fn read_population(path: &Path, like: &Table) -> CliResult<DMatrix<f64>> {
    let t = read_table(path)?;
    if t.names != like.names {
        return Err(CliError::input(path, format!("columns {:?} differ from the count file {:?}", t.names, like.names)));
    }
    if t.time != like.time {
        return Err(CliError::input(path, "time column differs from the count file"));
    }
    let mut out = DMatrix::zeros(t.cells.len(), t.names.len());
    for (r, row) in t.cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::input(path, format!("line {}, column `{}`: `{cell}` is not a number", t.lines[r], t.names[c]))
            })?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::input(
                    path,
                    format!("line {}, column `{}`: population must be positive, got {v}", t.lines[r], t.names[c]),
                ));
            }
            out[(r, c)] = v;
        }
    }
    Ok(out)
}

/// Reads a `date,<unit>...` (or `index,<unit>...`) count file, with an
/// optional population sidecar of identical shape.
pub fn read_sts_csv(path: &Path, population: Option<&Path>, meta: CsvMeta) -> CliResult<StsFrame> {
    let t = read_table(path)?;
    let observed = count_matrix(path, &t, 0)?;
    let mut b = build(path, &t, observed, &t.names, meta)?;
    if let Some(p) = population {
        b = b.population(read_population(p, &t)?);
    }
    b.build().map_err(|e| CliError::input(path, e.to_string()))
}

/// Reads a `date,total,<cat>...` file into a multinomial-mode frame.
pub fn read_multinomial_csv(path: &Path, meta: CsvMeta) -> CliResult<StsFrame> {
    let t = read_table(path)?;
    if t.names.first().map(String::as_str) != Some("total") || t.names.len() < 3 {
        return Err(CliError::input(path, "line 1: expected `date,total,<category>,...` with at least two categories"));
    }
    let all = count_matrix(path, &t, 0)?;
    let k = t.names.len() - 1;
    let observed = all.columns(1, k).into_owned();
    for r in 0..all.nrows() {
        let sum: u64 = observed.row(r).iter().sum();
        if sum != all[(r, 0)] {
            return Err(CliError::input(
                path,
                format!("line {}: categories sum to {sum} but total is {}", t.lines[r], all[(r, 0)]),
            ));
        }
    }
    let population = DMatrix::from_fn(all.nrows(), k, |r, _| all[(r, 0)] as f64);
    build(path, &t, observed, &t.names[1..], meta)?
        .population(population)
        .multinomial(true)
        .build()
        .map_err(|e| CliError::input(path, e.to_string()))
}

/// Renders a number with at most six significant digits.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// One line of the detection output.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputRow {
    pub date: String,
    pub unit: String,
    pub observed: u64,
    pub upperbound: Option<f64>,
    pub alarm: bool,
    pub score: f64,
}

pub const RESULT_HEADER: [&str; 6] = ["date", "unit", "observed", "upperbound", "alarm", "score"];

/// Rows of a result, unit by unit in time order.
pub fn result_rows(res: &SurveillanceResult) -> Vec<OutputRow> {
    let sts = &res.sts;
    let mut rows = Vec::with_capacity(sts.n() * sts.m());
    for u in 0..sts.m() {
        for t in 0..sts.n() {
            let date = match sts.date(t) {
                Some(d) => d.format("%Y-%m-%d").to_string(),
                None => sts.epoch()[t].to_string(),
            };
            rows.push(OutputRow {
                date,
                unit: sts.unit_names()[u].clone(),
                observed: sts.observed()[(t, u)],
                upperbound: res.upperbounds()[(t, u)],
                alarm: res.alarms()[(t, u)],
                score: res.score[(t, u)],
            });
        }
    }
    rows
}

fn writer(path: &Path) -> CliResult<csv::Writer<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e.to_string()))
}

pub fn write_results(path: &Path, rows: &[OutputRow]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(RESULT_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows.iter().map(ResultRecord::from) {
        let alarm = if r.alarm { "1" } else { "0" };
        w.write_record([&r.date, &r.unit, &r.observed, &r.upperbound, alarm, &r.score]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Result rows as written, with every field kept verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub date: String,
    pub unit: String,
    pub observed: String,
    pub upperbound: String,
    pub alarm: bool,
    pub score: String,
}

impl From<&OutputRow> for ResultRecord {
    fn from(r: &OutputRow) -> Self {
        ResultRecord {
            date: r.date.clone(),
            unit: r.unit.clone(),
            observed: r.observed.to_string(),
            upperbound: r.upperbound.map(fmt_num).unwrap_or_default(),
            alarm: r.alarm,
            score: fmt_num(r.score),
        }
    }
}

pub fn read_results(path: &Path) -> CliResult<Vec<ResultRecord>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| CliError::input(path, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != RESULT_HEADER {
        return Err(CliError::input(path, format!("line 1: expected header {}", RESULT_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::input(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let alarm = match &rec[4] {
            "0" => false,
            "1" => true,
            other => return Err(CliError::input(path, format!("line {line}: alarm must be 0 or 1, found `{other}`"))),
        };
        out.push(ResultRecord {
            date: rec[0].to_string(),
            unit: rec[1].to_string(),
            observed: rec[2].to_string(),
            upperbound: rec[3].to_string(),
            alarm,
            score: rec[5].to_string(),
        });
    }
    Ok(out)
}

/// One grid point of a calibration table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRow {
    pub h: f64,
    pub prob_markov: Option<f64>,
    pub prob_mc: Option<f64>,
    pub mc_se: Option<f64>,
}

pub fn write_calibration(path: &Path, rows: &[CalibrationRow]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["h", "prob_markov", "prob_mc", "mc_se"]).map_err(|e| csv_err(path, e))?;
    let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    for r in rows {
        w.write_record([fmt_num(r.h), opt(r.prob_markov), opt(r.prob_mc), opt(r.mc_se)]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes text to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

/// Reads a headerless numeric matrix (one row per monitored timepoint).
pub fn read_matrix(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(file);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::input(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| CliError::input(path, format!("line {line}: `{c}` is not a number"))))
            .collect::<CliResult<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}
