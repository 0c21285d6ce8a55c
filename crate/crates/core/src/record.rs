//! Run records and their on-disk form.
//!
//! Output directory layout:
//!
//! * `ensemble_iter{ℓ}.csv`: model ensemble after pass `ℓ` (`ℓ = 0` is the prior sample)
//! * `forecast_final.csv`: simulated data of the final ensemble
//! * `diagnostics.json`: schedule, per-pass mean mismatch, evaluation count, seed
//! * `mismatch.csv`: `ensemble,member,phi` for every forecast

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{MismatchReport, SolverChoice};
use crate::ensemble::{format_f64, Ensemble};
use crate::error::{EsmdaError, Result};
use crate::schedule::{AlphaSchedule, ScheduleReport};

/// One assimilation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub alpha: f64,
    /// Mean mismatch of the forecast that entered this pass.
    pub mean_mismatch: f64,
    pub member_mismatch: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub n_e: usize,
    pub solver: SolverChoice,
    pub schedule: AlphaSchedule,
    pub schedule_report: ScheduleReport,
    /// `N_a + 1` snapshots, prior first.
    pub ensembles: Vec<Ensemble>,
    pub iterations: Vec<IterationRecord>,
    pub final_forecast: Ensemble,
    pub final_mismatch: MismatchReport,
    pub evaluations: u64,
}

impl RunRecord {
    pub fn final_ensemble(&self) -> &Ensemble {
        self.ensembles
            .last()
            .expect("record holds the prior ensemble")
    }

    pub fn initial_mismatch(&self) -> f64 {
        self.iterations
            .first()
            .map_or(self.final_mismatch.mean, |it| it.mean_mismatch)
    }

    pub fn n_a(&self) -> usize {
        self.iterations.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub alpha: f64,
    pub mean_mismatch: f64,
    pub ensemble_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalDiagnostics {
    pub mean_mismatch: f64,
    pub forecast_file: String,
}

/// Contents of `diagnostics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub seed: u64,
    pub n_e: usize,
    pub n_a: usize,
    pub alphas: Vec<f64>,
    pub schedule_valid: bool,
    pub schedule_residual: f64,
    pub solver: SolverChoice,
    pub evaluations: u64,
    pub prior_ensemble_file: String,
    pub iterations: Vec<IterationDiagnostics>,
    pub final_forecast: FinalDiagnostics,
    /// Data indices with zero noise, left out of the mismatch.
    pub excluded_data: Vec<usize>,
}

pub fn ensemble_file_name(iteration: usize) -> String {
    format!("ensemble_iter{iteration}.csv")
}

pub const FORECAST_FILE: &str = "forecast_final.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const MISMATCH_FILE: &str = "mismatch.csv";

impl RunRecord {
    pub fn diagnostics(&self) -> Diagnostics {
        Diagnostics {
            seed: self.seed,
            n_e: self.n_e,
            n_a: self.n_a(),
            alphas: self.schedule.alphas().to_vec(),
            schedule_valid: self.schedule_report.valid,
            schedule_residual: self.schedule_report.residual,
            solver: self.solver,
            evaluations: self.evaluations,
            prior_ensemble_file: ensemble_file_name(0),
            iterations: self
                .iterations
                .iter()
                .map(|it| IterationDiagnostics {
                    iteration: it.iteration,
                    alpha: it.alpha,
                    mean_mismatch: it.mean_mismatch,
                    ensemble_file: ensemble_file_name(it.iteration),
                })
                .collect(),
            final_forecast: FinalDiagnostics {
                mean_mismatch: self.final_mismatch.mean,
                forecast_file: FORECAST_FILE.into(),
            },
            excluded_data: self.final_mismatch.excluded.clone(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| EsmdaError::Io {
            path: path.into(),
            source: e,
        })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EsmdaError + '_ {
    move |e| EsmdaError::Io {
        path: path.into(),
        source: e,
    }
}

/// Writes every snapshot and diagnostic into `dir`, returning the paths written.
pub fn write_record(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    for (l, e) in record.ensembles.iter().enumerate() {
        let path = dir.join(ensemble_file_name(l));
        e.write_csv(create(&path)?, "m")?;
        written.push(path);
    }

    let path = dir.join(FORECAST_FILE);
    record.final_forecast.write_csv(create(&path)?, "d")?;
    written.push(path);

    let path = dir.join(DIAGNOSTICS_FILE);
    let mut json = serde_json::to_string_pretty(&record.diagnostics())?;
    json.push('\n');
    fs::write(&path, json).map_err(io_err(&path))?;
    written.push(path);

    let path = dir.join(MISMATCH_FILE);
    let mut out = create(&path)?;
    let mut lines = String::from("ensemble,member,phi\n");
    let forecasts = record
        .iterations
        .iter()
        .map(|it| &it.member_mismatch)
        .chain(std::iter::once(&record.final_mismatch.per_member));
    for (l, phis) in forecasts.enumerate() {
        for (j, phi) in phis.iter().enumerate() {
            lines.push_str(&format!("{l},{j},{}\n", format_f64(*phi)));
        }
    }
    out.write_all(lines.as_bytes()).map_err(io_err(&path))?;
    out.flush().map_err(io_err(&path))?;
    written.push(path);

    Ok(written)
}

/// One row of the convergence table: mismatch statistics of forecast `ensemble`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Index of the ensemble that was forecast (0 = prior).
    pub ensemble: usize,
    /// Coefficient of the pass this forecast fed, `None` for the final forecast.
    pub alpha: Option<f64>,
    pub mean_mismatch: f64,
    pub min_mismatch: f64,
    pub max_mismatch: f64,
}

pub fn summarize(record: &RunRecord) -> Vec<SummaryRow> {
    let row = |ensemble, alpha, mean, phis: &[f64]| SummaryRow {
        ensemble,
        alpha,
        mean_mismatch: mean,
        min_mismatch: phis.iter().copied().fold(f64::INFINITY, f64::min),
        max_mismatch: phis.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let mut rows: Vec<SummaryRow> = record
        .iterations
        .iter()
        .map(|it| {
            row(
                it.iteration - 1,
                Some(it.alpha),
                it.mean_mismatch,
                &it.member_mismatch,
            )
        })
        .collect();
    rows.push(row(
        record.n_a(),
        None,
        record.final_mismatch.mean,
        &record.final_mismatch.per_member,
    ));
    rows
}
