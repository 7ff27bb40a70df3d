//! Report rows and their CSV rendering.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_COLUMNS: &str =
    "sweep_param,sup_coupled_err,sup_coupled_err_se,sup_rho_upper,slope_fit,criterion,pass";

/// One row of a study. Columns that do not apply hold `NaN`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub sweep_param: f64,
    pub sup_coupled_err: f64,
    pub sup_coupled_err_se: f64,
    pub sup_rho_upper: f64,
    pub slope_fit: f64,
    /// `+`-joined names of the checks evaluated on this row.
    pub criterion: String,
    pub pass: bool,
    /// Names of the checks that failed (not part of the CSV).
    pub failed: Vec<String>,
}

impl ReportRow {
    pub fn new(sweep_param: f64) -> Self {
        Self {
            sweep_param,
            sup_coupled_err: f64::NAN,
            sup_coupled_err_se: f64::NAN,
            sup_rho_upper: f64::NAN,
            slope_fit: f64::NAN,
            criterion: String::new(),
            pass: true,
            failed: Vec::new(),
        }
    }

    /// Records a named check; the row passes only if every check does.
    pub fn check(&mut self, name: &str, ok: bool) {
        if !self.criterion.is_empty() {
            self.criterion.push('+');
        }
        self.criterion.push_str(name);
        if !ok {
            self.pass = false;
            self.failed.push(name.to_string());
        }
    }

    /// Outcome of the named check, `None` if it was not evaluated here.
    pub fn passed(&self, name: &str) -> Option<bool> {
        self.criterion
            .split('+')
            .any(|c| c == name)
            .then(|| !self.failed.iter().any(|f| f == name))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub study: String,
    pub seed: u64,
    pub config_echo: Vec<String>,
    /// Free-form `name = value` lines (oracles, constants, fitted values).
    pub notes: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ConvergenceReport {
    pub fn new(study: &str, seed: u64, config_echo: Vec<String>) -> Self {
        Self {
            study: study.to_string(),
            seed,
            config_echo,
            notes: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn note(&mut self, name: &str, value: impl std::fmt::Display) {
        self.notes.push(format!("{name} = {value}"));
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    /// `0` when every row passes, `2` otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_pass() {
            0
        } else {
            2
        }
    }

    /// Rows whose criterion list contains `name`.
    pub fn rows_with<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.criterion.split('+').any(|c| c == name))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# mvlab {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "# study: {}", self.study);
        let _ = writeln!(out, "# seed: {}", self.seed);
        let _ = writeln!(out, "# config:");
        for line in &self.config_echo {
            let _ = writeln!(out, "#   {line}");
        }
        for note in &self.notes {
            let _ = writeln!(out, "# note: {note}");
        }
        let _ = writeln!(out, "{CSV_COLUMNS}");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                fmt_float(r.sweep_param),
                fmt_float(r.sup_coupled_err),
                fmt_float(r.sup_coupled_err_se),
                fmt_float(r.sup_rho_upper),
                fmt_float(r.slope_fit),
                r.criterion,
                r.pass
            );
        }
        out
    }
}

pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.12e}")
    }
}

/// Writes the CSV rendering of `report` to `path`.
pub fn emit_report(report: &ConvergenceReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_csv()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
