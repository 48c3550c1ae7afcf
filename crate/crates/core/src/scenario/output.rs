//! Run artifacts: CSV tables, the JSON summary and the gnuplot script.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Numeric table written as one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Plot the first column on a log axis too.
    pub log_x: bool,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new(), log_x: false }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Header row plus `{:.16e}` cells (17 significant digits), LF endings.
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{v:.16e}");
            }
            s.push('\n');
        }
        s
    }
}

/// One acceptance check of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    /// How `measured` is compared with `tolerance`.
    pub relation: String,
    pub detail: String,
}

impl Check {
    /// Passes when `measured <= tolerance` (NaN fails).
    pub fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            relation: "<=".into(),
            detail: detail.into(),
        }
    }

    /// Passes when `measured >= tolerance` (NaN fails).
    pub fn at_least(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed: measured >= tolerance,
            measured,
            tolerance,
            relation: ">=".into(),
            detail: detail.into(),
        }
    }

    pub fn not_run(name: &str, reason: &str) -> Self {
        Check {
            name: name.to_string(),
            passed: false,
            measured: f64::NAN,
            tolerance: f64::NAN,
            relation: "not run".into(),
            detail: reason.to_string(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {:e} {} {:e}{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.relation,
            self.tolerance,
            if self.detail.is_empty() { String::new() } else { format!(" ({})", self.detail) }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Passed,
    CheckFailed,
    SolverFailed,
}

impl RunStatus {
    /// Process exit code: 0 pass, 1 check failure, 3 solver failure.
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Passed => 0,
            RunStatus::CheckFailed => 1,
            RunStatus::SolverFailed => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub status: RunStatus,
    pub wall_time_s: f64,
    pub defaults: Vec<String>,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
    pub error: Option<String>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }

    pub fn to_json(&self) -> String {
        // non-finite numbers become null
        serde_json::to_string_pretty(self).unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}"))
    }
}

fn is_residual(column: &str) -> bool {
    column.contains("residual") || column.contains("error") || column.contains("drift")
}

/// gnuplot script plotting every CSV in `files` (paths relative to the
/// script). Residual-like columns get their own log-scale panel.
pub fn plot_script(scenario: &str, tables: &[(&Table, &str)]) -> String {
    let mut s = format!("# gnuplot script for {scenario}\n");
    if tables.is_empty() {
        s.push_str("# no tables were written\n");
        return s;
    }
    s.push_str("set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n");
    for (table, file) in tables {
        if table.columns.len() < 2 {
            continue;
        }
        let x = &table.columns[0];
        let (residuals, values): (Vec<usize>, Vec<usize>) =
            (1..table.columns.len()).partition(|&i| is_residual(&table.columns[i]));
        let stem = file.trim_end_matches(".csv");
        let mut panel = |suffix: &str, cols: &[usize], log_y: bool| {
            if cols.is_empty() {
                return;
            }
            let _ = writeln!(s, "\nset output '{stem}{suffix}.png'");
            let _ = writeln!(s, "set xlabel '{x}'");
            s.push_str(if table.log_x { "set logscale x\n" } else { "unset logscale x\n" });
            s.push_str(if log_y { "set logscale y\n" } else { "unset logscale y\n" });
            let parts: Vec<String> = cols
                .iter()
                .map(|i| format!("'{file}' using 1:{} with lines", i + 1))
                .collect();
            let _ = writeln!(s, "plot {}", parts.join(", \\\n     "));
        };
        panel("", &values, table.log_x);
        panel("_residuals", &residuals, true);
    }
    s.push_str("unset output\n");
    s
}

/// Writes the tables, `summary.json` and `plot.gp` into `dir`; returns the
/// written paths (tables first).
pub fn write_artifacts(dir: &Path, summary: &mut RunSummary, tables: &[Table]) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut named = Vec::new();
    for t in tables {
        let file = format!("{}_{}.csv", summary.scenario, t.name);
        let path = dir.join(&file);
        std::fs::write(&path, t.to_csv())?;
        written.push(path);
        named.push(file);
    }
    let refs: Vec<(&Table, &str)> = tables.iter().zip(named.iter().map(|s| s.as_str())).collect();
    let script = plot_script(&summary.scenario, &refs);
    let script_path = dir.join("plot.gp");
    std::fs::write(&script_path, script)?;
    summary.files = named.clone();
    summary.files.push("plot.gp".into());
    summary.files.push("summary.json".into());
    let summary_path = dir.join("summary.json");
    let mut json = summary.to_json();
    json.push('\n');
    std::fs::write(&summary_path, json)?;
    written.push(script_path);
    written.push(summary_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_lossless_and_lf_terminated() {
        let mut t = Table::new("series", &["t", "x"]);
        t.push(vec![0.1, 1.0 / 3.0]);
        t.push(vec![-2.5e-300, f64::MAX]);
        let csv = t.to_csv();
        assert!(!csv.contains('\r'));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x");
        assert_eq!(lines[1], "1.0000000000000001e-1,3.3333333333333331e-1");
        for (line, row) in lines[1..].iter().zip(&t.rows) {
            let back: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert_eq!(&back, row);
        }
    }

    #[test]
    fn empty_manifest_gives_header_only() {
        let s = plot_script("free_packet", &[]);
        assert!(s.lines().all(|l| l.starts_with('#')));
        assert!(s.contains("free_packet"));
    }

    #[test]
    fn residual_columns_get_a_log_panel() {
        let mut t = Table::new("series", &["t", "norm2", "residual_exact"]);
        t.push(vec![0.0, 1.0, 1e-9]);
        let s = plot_script("dual_space_field", &[(&t, "dual_space_field_series.csv")]);
        assert!(s.contains("dual_space_field_series_residuals.png"));
        assert!(s.contains("using 1:3"));
        assert!(s.contains("set logscale y"));
    }

    #[test]
    fn dispersion_table_is_log_log() {
        let mut t = Table::new("dispersion", &["t", "s"]);
        t.log_x = true;
        t.push(vec![1.0, 1.0]);
        let s = plot_script("dispersion_tables", &[(&t, "d.csv")]);
        assert!(s.contains("set logscale x\nset logscale y"));
    }

    #[test]
    fn check_relations() {
        assert!(Check::at_most("a", 1.0, 1.0, "").passed);
        assert!(!Check::at_most("a", f64::NAN, 1.0, "").passed);
        assert!(Check::at_least("a", 2.0, 1.0, "").passed);
        assert!(!Check::not_run("a", "x").passed);
        assert!(Check::at_most("a", 0.5, 1.0, "").line().starts_with("PASS a:"));
    }

    proptest::proptest! {
        #[test]
        fn csv_round_trips_any_finite_value(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..40)) {
            let mut t = Table::new("x", &["v"]);
            for v in &values {
                t.push(vec![*v]);
            }
            let back: Vec<f64> = t.to_csv().lines().skip(1).map(|l| l.parse().unwrap()).collect();
            proptest::prop_assert_eq!(back, values);
        }
    }
}
