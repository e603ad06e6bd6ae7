//! Week-by-unit tables of observed counts and thresholds.

use chrono::{Datelike, NaiveDate};

use crate::config::ReportFormat;
use crate::io::ResultRecord;

/// Placeholder for a threshold that could not be computed.
pub const MISSING: &str = "–";

/// Observed count and rendered threshold of one unit at one date.
type Cell = Option<(String, String)>;

struct Table {
    units: Vec<String>,
    /// (year, week, cells by unit) per date.
    rows: Vec<(String, String, Vec<Cell>)>,
}

fn year_week(date: &str) -> (String, String) {
    match NaiveDate::parse_from_str(date, "%Y-%m-%d") {
        Ok(d) => {
            let w = d.iso_week();
            (w.year().to_string(), w.week().to_string())
        }
        Err(_) => (String::new(), date.to_string()),
    }
}

fn build(records: &[ResultRecord], mark: impl Fn(&str) -> String) -> Table {
    let mut units: Vec<String> = Vec::new();
    let mut dates: Vec<String> = Vec::new();
    for r in records {
        if !units.contains(&r.unit) {
            units.push(r.unit.clone());
        }
        if !dates.contains(&r.date) {
            dates.push(r.date.clone());
        }
    }
    let mut cells = vec![vec![None; units.len()]; dates.len()];
    for r in records {
        let t = dates.iter().position(|d| *d == r.date).expect("date collected");
        let u = units.iter().position(|x| *x == r.unit).expect("unit collected");
        let thr = if r.upperbound.is_empty() {
            MISSING.to_string()
        } else if r.alarm {
            mark(&r.upperbound)
        } else {
            r.upperbound.clone()
        };
        cells[t][u] = Some((r.observed.clone(), thr));
    }
    let rows = dates
        .iter()
        .zip(cells)
        .map(|(d, c)| {
            let (y, w) = year_week(d);
            (y, w, c)
        })
        .collect();
    Table { units, rows }
}

fn latex_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' | '%' | '$' | '#' | '_' | '{' | '}' => {
                out.push('\\');
                out.push(c);
            }
            '~' => out.push_str("\\textasciitilde{}"),
            '^' => out.push_str("\\textasciicircum{}"),
            '\\' => out.push_str("\\textbackslash{}"),
            _ => out.push(c),
        }
    }
    out
}

fn latex(records: &[ResultRecord]) -> String {
    let table = build(records, |s| format!("\\textbf{{{s}}}"));
    let k = table.units.len();
    let mut out = String::new();
    out.push_str(&format!("\\begin{{tabular}}{{rr{}}}\n\\hline\n", "|rr".repeat(k)));
    out.push_str("Year & Week");
    for (i, u) in table.units.iter().enumerate() {
        let sep = if i + 1 < k { "c|" } else { "c" };
        out.push_str(&format!(" & \\multicolumn{{2}}{{{sep}}}{{{}}}", latex_escape(u)));
    }
    out.push_str(" \\\\\n &");
    out.push_str(&" & observed & threshold".repeat(k));
    out.push_str(" \\\\\n\\hline\n");
    for (y, w, cells) in &table.rows {
        out.push_str(&format!("{y} & {w}"));
        for c in cells {
            let (o, t) = c.clone().unwrap_or_default();
            out.push_str(&format!(" & {o} & {t}"));
        }
        out.push_str(" \\\\\n");
    }
    out.push_str("\\hline\n\\end{tabular}\n");
    out
}

fn text(records: &[ResultRecord]) -> String {
    let table = build(records, |s| format!("{s}*"));
    let mut grid: Vec<Vec<String>> = Vec::with_capacity(table.rows.len() + 1);
    let mut head = vec!["year".to_string(), "week".to_string()];
    for u in &table.units {
        head.push(format!("{u}.observed"));
        head.push(format!("{u}.threshold"));
    }
    grid.push(head);
    for (y, w, cells) in &table.rows {
        let mut line = vec![if y.is_empty() { "-".to_string() } else { y.clone() }, w.clone()];
        for c in cells {
            let (o, t) = c.clone().unwrap_or_else(|| ("-".into(), "-".into()));
            line.push(o);
            line.push(t);
        }
        grid.push(line);
    }
    let ncol = grid[0].len();
    let widths: Vec<usize> =
        (0..ncol).map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in &grid {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(c, &w)| format!("{c:>w$}")).collect();
        out.push_str(&cells.join("  "));
        out.push('\n');
    }
    out
}

/// Renders result records as a table. Alarmed thresholds are bold in
/// LaTeX and starred in text; CSV reproduces the records unchanged.
pub fn render(records: &[ResultRecord], format: ReportFormat) -> String {
    match format {
        ReportFormat::Latex => latex(records),
        ReportFormat::Text => text(records),
        ReportFormat::Csv => {
            let mut out = crate::io::RESULT_HEADER.join(",");
            out.push('\n');
            for r in records {
                let alarm = if r.alarm { "1" } else { "0" };
                out.push_str(&[r.date.as_str(), &r.unit, &r.observed, &r.upperbound, alarm, &r.score].join(","));
                out.push('\n');
            }
            out
        }
    }
}

/// Parses a text report back into (year, week, unit, observed, threshold, alarm).
pub fn parse_text(report: &str) -> Vec<(String, String, String, String, String, bool)> {
    let mut lines = report.lines();
    let Some(head) = lines.next() else { return vec![] };
    let head: Vec<&str> = head.split_whitespace().collect();
    let units: Vec<&str> = head[2..].iter().step_by(2).map(|h| h.trim_end_matches(".observed")).collect();
    let mut out = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        for (i, u) in units.iter().enumerate() {
            let (o, t) = (f[2 + 2 * i], f[3 + 2 * i]);
            if o == "-" {
                continue;
            }
            let alarm = t.ends_with('*');
            out.push((f[0].into(), f[1].into(), u.to_string(), o.into(), t.trim_end_matches('*').into(), alarm));
        }
    }
    out
}
