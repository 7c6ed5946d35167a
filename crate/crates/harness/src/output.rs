//! CSV and JSON serialization of experiment results.
//!
//! Every CSV file starts with a `# schema: <name>` line naming its column
//! layout, followed by the header row and the data rows. Rate and sweep files
//! end with `#fit,...` summary lines carrying fitted slopes.
//!
//! | schema | columns |
//! |---|---|
//! | `meanfield.rates.v1` | kind, l1, l2, psi, M, mean_diff, var_diff, mean_fine, var_fine, work_per_sample, wall_seconds |
//! | `meanfield.sweep.v1` | method, tol, seed, estimate, error_vs_reference, total_work, wall_seconds, max_sample_work, max_sample_wall_seconds, max_level_or_index, max_particle_level, max_time_level, total_samples |
//! | `meanfield.ppcheck.v1` | row, seed, estimate, mean, std_dev, ks_distance, degenerate |
//! | `meanfield.predict.v1` | method, s_p, s_t, gamma_p, tol_exponent, log_exponent |
//!
//! Fit lines: `#fit,kind,psi,stat,slope,intercept,residual_rms,points_used,zeros_excluded`
//! for rates and `#fit,method,stat,slope,intercept,residual_rms,points_used,zeros_excluded`
//! for sweeps, where sweep slopes are of `log2 stat` against `log2(1/tol)`.

use std::fs;
use std::path::Path;

use meanfield_core::analysis::{RateFit, Table1Entry};
use serde::Serialize;

use crate::error::{HarnessError, HarnessResult};
use crate::experiments::{PpTable, RatesTable, SweepTable};

pub const RATES_SCHEMA: &str = "meanfield.rates.v1";
pub const SWEEP_SCHEMA: &str = "meanfield.sweep.v1";
pub const PPCHECK_SCHEMA: &str = "meanfield.ppcheck.v1";
pub const PREDICT_SCHEMA: &str = "meanfield.predict.v1";

/// Shortest round-trip decimal, switching to exponent form for tiny and huge magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn fit_fields(fit: &RateFit) -> [String; 5] {
    [
        num(fit.slope),
        num(fit.intercept),
        num(fit.residual_rms),
        fit.points_used.to_string(),
        fit.zeros_excluded.to_string(),
    ]
}

struct Csv {
    writer: csv::Writer<Vec<u8>>,
}

impl Csv {
    fn new(schema: &str, header: &[&str]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(format!("# schema: {schema}\n").as_bytes());
        let mut writer = csv::WriterBuilder::new().flexible(true).from_writer(buf);
        writer.write_record(header).expect("writing to memory");
        Self { writer }
    }

    fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("writing to memory");
    }

    fn finish(self) -> String {
        let bytes = self.writer.into_inner().expect("flushing to memory");
        String::from_utf8(bytes).expect("csv output is utf-8")
    }
}

pub fn rates_csv(table: &RatesTable) -> String {
    let mut csv = Csv::new(
        RATES_SCHEMA,
        &[
            "kind", "l1", "l2", "psi", "M", "mean_diff", "var_diff", "mean_fine", "var_fine", "work_per_sample",
            "wall_seconds",
        ],
    );
    for r in &table.rows {
        csv.row([
            r.kind.to_string(),
            r.l1.to_string(),
            r.l2.to_string(),
            r.psi.clone(),
            r.samples.to_string(),
            num(r.mean_diff),
            num(r.var_diff),
            num(r.mean_fine),
            num(r.var_fine),
            num(r.work_per_sample),
            num(r.wall_seconds),
        ]);
    }
    for f in &table.fits {
        let mut fields = vec!["#fit".to_string(), f.kind.to_string(), f.psi.clone(), f.stat.clone()];
        fields.extend(fit_fields(&f.fit));
        csv.row(fields);
    }
    csv.finish()
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut csv = Csv::new(
        SWEEP_SCHEMA,
        &[
            "method",
            "tol",
            "seed",
            "estimate",
            "error_vs_reference",
            "total_work",
            "wall_seconds",
            "max_sample_work",
            "max_sample_wall_seconds",
            "max_level_or_index",
            "max_particle_level",
            "max_time_level",
            "total_samples",
        ],
    );
    for r in &table.rows {
        csv.row([
            r.method.to_string(),
            num(r.tol),
            r.seed.to_string(),
            num(r.estimate),
            opt(r.error_vs_reference),
            num(r.total_work),
            num(r.wall_seconds),
            num(r.max_sample_work),
            num(r.max_sample_wall_seconds),
            opt(r.final_level),
            r.max_particle_level.to_string(),
            r.max_time_level.to_string(),
            r.total_samples.to_string(),
        ]);
    }
    for f in &table.fits {
        let mut fields = vec!["#fit".to_string(), f.method.to_string(), f.stat.clone()];
        fields.extend(fit_fields(&f.fit));
        csv.row(fields);
    }
    csv.finish()
}

/// `R` run rows followed by one summary row.
pub fn ppcheck_csv(table: &PpTable) -> String {
    let mut csv = Csv::new(PPCHECK_SCHEMA, &["row", "seed", "estimate", "mean", "std_dev", "ks_distance", "degenerate"]);
    for &(seed, estimate) in &table.runs {
        csv.row(["run".to_string(), seed.to_string(), num(estimate), String::new(), String::new(), String::new(), String::new()]);
    }
    let s = &table.summary;
    csv.row([
        "summary".to_string(),
        String::new(),
        String::new(),
        num(s.mean),
        num(s.std_dev),
        opt(s.ks_distance),
        s.degenerate.to_string(),
    ]);
    csv.finish()
}

pub fn predict_csv(entries: &[Table1Entry], s_p: f64) -> String {
    let mut csv = Csv::new(PREDICT_SCHEMA, &["method", "s_p", "s_t", "gamma_p", "tol_exponent", "log_exponent"]);
    for e in entries {
        csv.row([
            e.method.to_string(),
            num(s_p),
            num(e.s_t),
            num(e.gamma_p),
            num(e.law.tol_exponent),
            num(e.law.log_exponent),
        ]);
    }
    csv.finish()
}

/// Pretty JSON with fields in declaration order and a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_file(path: &Path, text: &str) -> HarnessResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}
