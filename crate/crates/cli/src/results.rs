//! Result rows, the results CSV and its aggregate.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ntlab_core::training::Variant;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const RESULTS_HEADER: &str = "seed,eps_x,eps_y,l_pct,variant,acc_with_source,acc_target_only,ntg,\
mean_omega_perturbed,mean_omega_clean,wall_seconds,status";

pub const STATUS_OK: &str = "ok";

/// One row of the results file. Numeric columns are empty for failed rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub eps_x: f64,
    pub eps_y: f64,
    pub l_pct: f64,
    pub variant: Variant,
    pub acc_with_source: Option<f64>,
    pub acc_target_only: Option<f64>,
    /// `acc_target_only - acc_with_source`, the 0-1 risk gap.
    pub ntg: Option<f64>,
    pub mean_omega_perturbed: Option<f64>,
    pub mean_omega_clean: Option<f64>,
    pub wall_seconds: f64,
    /// `ok` or `failed: <reason>`.
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    /// Negative transfer condition of the row.
    pub fn ntc(&self) -> Option<bool> {
        self.ntg.map(|g| g > 0.0)
    }

    /// The row without its timing column, for reproducibility checks.
    pub fn without_timing(&self) -> ResultRow {
        ResultRow {
            wall_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Appends rows to a results CSV, flushing after each one.
pub struct ResultsWriter {
    inner: csv::Writer<File>,
}

impl ResultsWriter {
    pub fn create(path: &Path) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let inner = csv::WriterBuilder::new().has_headers(true).from_writer(file);
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &ResultRow) -> CliResult<()> {
        self.inner.serialize(row)?;
        self.inner.flush().map_err(|e| CliError::Format(e.to_string()))?;
        Ok(())
    }
}

pub fn read_results(path: &Path) -> CliResult<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != RESULTS_HEADER {
        return Err(CliError::Format(format!(
            "{}: unexpected header `{header}`",
            path.display()
        )));
    }
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

/// Mean and sample standard deviation of one metric within a group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Self { mean: Some(mean), std }
    }

    /// `std / sqrt(n)`.
    pub fn standard_error(&self, n: usize) -> Option<f64> {
        self.std.map(|s| s / (n as f64).sqrt())
    }
}

/// Seed-aggregated statistics of one (eps, L, variant) setting.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub eps_x: f64,
    pub eps_y: f64,
    pub l_pct: f64,
    pub variant: Variant,
    pub n_ok: usize,
    pub n_failed: usize,
    pub acc_with_source: Summary,
    pub acc_target_only: Summary,
    pub ntg: Summary,
    pub mean_omega_perturbed: Summary,
    pub mean_omega_clean: Summary,
}

pub const AGGREGATE_HEADER: &str = "eps_x,eps_y,l_pct,variant,n_ok,n_failed,\
acc_with_source_mean,acc_with_source_std,acc_target_only_mean,acc_target_only_std,\
ntg_mean,ntg_std,mean_omega_perturbed_mean,mean_omega_perturbed_std,\
mean_omega_clean_mean,mean_omega_clean_std";

/// Groups rows by setting, in order of first appearance.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(u64, u64, u64, Variant)> = Vec::new();
    for r in rows {
        let k = (r.eps_x.to_bits(), r.eps_y.to_bits(), r.l_pct.to_bits(), r.variant);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(ex, ey, l, variant)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| {
                    r.eps_x.to_bits() == ex && r.eps_y.to_bits() == ey && r.l_pct.to_bits() == l && r.variant == variant
                })
                .collect();
            let ok: Vec<&&ResultRow> = group.iter().filter(|r| r.is_ok()).collect();
            let col =
                |f: fn(&ResultRow) -> Option<f64>| Summary::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            AggregateRow {
                eps_x: f64::from_bits(ex),
                eps_y: f64::from_bits(ey),
                l_pct: f64::from_bits(l),
                variant,
                n_ok: ok.len(),
                n_failed: group.len() - ok.len(),
                acc_with_source: col(|r| r.acc_with_source),
                acc_target_only: col(|r| r.acc_target_only),
                ntg: col(|r| r.ntg),
                mean_omega_perturbed: col(|r| r.mean_omega_perturbed),
                mean_omega_clean: col(|r| r.mean_omega_clean),
            }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> CliResult<()> {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for a in rows {
        let mut fields = vec![
            a.eps_x.to_string(),
            a.eps_y.to_string(),
            a.l_pct.to_string(),
            a.variant.to_string(),
            a.n_ok.to_string(),
            a.n_failed.to_string(),
        ];
        for s in [
            a.acc_with_source,
            a.acc_target_only,
            a.ntg,
            a.mean_omega_perturbed,
            a.mean_omega_clean,
        ] {
            fields.push(cell(s.mean));
            fields.push(cell(s.std));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| CliError::io(path, e))
}
