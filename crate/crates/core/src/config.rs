//! JSON run configuration.
//!
//! Parsing is strict: unknown keys are rejected and every error carries the
//! JSON path where it occurred. Relative file paths are resolved against the
//! directory holding the config file.

use std::fs::File;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::{NoiseModel, SolverChoice};
use crate::ensemble::{read_numeric_csv, DataVector, GaussianPrior};
use crate::error::{EsmdaError, Result};
use crate::forward::{DeclineCurveModel, ForwardModel, LinearModel};
use crate::schedule::{AlphaSchedule, ScheduleReport};

/// A vector given inline or as a path to a CSV file (all numeric fields,
/// row-major; a non-numeric first row is treated as a header).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSource {
    Inline(Vec<f64>),
    Path(PathBuf),
}

/// A matrix given inline (list of rows) or as a CSV path (one row per line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Inline(Vec<Vec<f64>>),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleSpec {
    Equal { n_a: usize },
    Geometric { n_a: usize, ratio: f64 },
    Explicit { alphas: Vec<f64> },
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<AlphaSchedule> {
        match self {
            ScheduleSpec::Equal { n_a } => AlphaSchedule::equal_weights(*n_a),
            ScheduleSpec::Geometric { n_a, ratio } => {
                AlphaSchedule::geometric_decreasing(*n_a, *ratio)
            }
            ScheduleSpec::Explicit { alphas } => AlphaSchedule::explicit(alphas.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum PriorSpec {
    /// Independent components.
    Diagonal {
        mean: VectorSource,
        std_devs: VectorSource,
    },
    /// Full SPD covariance, factorized once on load.
    Full {
        mean: VectorSource,
        covariance: MatrixSource,
    },
    /// Lower-triangular factor `L` with `L Lᵀ` the covariance.
    Factor {
        mean: VectorSource,
        factor: MatrixSource,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForwardSpec {
    Linear {
        #[serde(rename = "G")]
        g: MatrixSource,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<VectorSource>,
    },
    Decline {
        times: Vec<f64>,
    },
}

fn default_parallelism() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("esmda_out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_e: usize,
    pub schedule: ScheduleSpec,
    /// Run even if the schedule fails the `Σ 1/α = 1` check.
    #[serde(default)]
    pub allow_schedule_violation: bool,
    pub prior: PriorSpec,
    pub forward_model: ForwardSpec,
    pub d_hist: VectorSource,
    /// Per-datum noise standard deviations.
    pub noise_std: VectorSource,
    #[serde(default)]
    pub solver: SolverChoice,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// The built-in forward models.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinModel {
    Linear(LinearModel),
    Decline(DeclineCurveModel),
}

impl ForwardModel for BuiltinModel {
    fn n_m(&self) -> usize {
        match self {
            BuiltinModel::Linear(m) => m.n_m(),
            BuiltinModel::Decline(m) => m.n_m(),
        }
    }

    fn n_d(&self) -> usize {
        match self {
            BuiltinModel::Linear(m) => m.n_d(),
            BuiltinModel::Decline(m) => m.n_d(),
        }
    }

    fn evaluate(&self, m: &[f64]) -> Result<Vec<f64>> {
        match self {
            BuiltinModel::Linear(model) => model.evaluate(m),
            BuiltinModel::Decline(model) => model.evaluate(m),
        }
    }
}

/// Everything a run needs, materialized and cross-checked.
#[derive(Debug, Clone)]
pub struct Problem {
    pub prior: GaussianPrior,
    pub model: BuiltinModel,
    pub d_hist: DataVector,
    pub noise: NoiseModel,
    pub schedule: AlphaSchedule,
    pub schedule_report: ScheduleReport,
}

fn config_err(location: &str, message: impl Into<String>) -> EsmdaError {
    EsmdaError::Config {
        location: location.into(),
        message: message.into(),
    }
}

fn dim_err(location: &str, expected: usize, found: usize) -> EsmdaError {
    config_err(
        location,
        format!("dimension mismatch: expected {expected}, found {found}"),
    )
}

fn read_table(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| EsmdaError::Io {
        path: path.into(),
        source: e,
    })?;
    let label = path.display().to_string();
    let first_numeric = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .map(|l| l.split(',').all(|f| f.trim().parse::<f64>().is_ok()))
        .unwrap_or(true);
    let rows = read_numeric_csv(text.as_bytes(), !first_numeric, &label)?;
    Ok(rows.into_iter().filter(|r| !r.is_empty()).collect())
}

impl VectorSource {
    pub fn load(&self) -> Result<Vec<f64>> {
        match self {
            VectorSource::Inline(v) => Ok(v.clone()),
            VectorSource::Path(p) => Ok(read_table(p)?.into_iter().flatten().collect()),
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let VectorSource::Path(p) = self {
            *p = base.join(&*p);
        }
    }
}

impl MatrixSource {
    pub fn load(&self, location: &str) -> Result<DMatrix<f64>> {
        let rows = match self {
            MatrixSource::Inline(r) => r.clone(),
            MatrixSource::Path(p) => read_table(p)?,
        };
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
            return Err(config_err(
                location,
                format!("row {i} has {} columns, expected {ncols}", r.len()),
            ));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
    }

    fn resolve(&mut self, base: &Path) {
        if let MatrixSource::Path(p) = self {
            *p = base.join(&*p);
        }
    }
}

impl PriorSpec {
    fn resolve(&mut self, base: &Path) {
        match self {
            PriorSpec::Diagonal { mean, std_devs } => {
                mean.resolve(base);
                std_devs.resolve(base);
            }
            PriorSpec::Full { mean, covariance } => {
                mean.resolve(base);
                covariance.resolve(base);
            }
            PriorSpec::Factor { mean, factor } => {
                mean.resolve(base);
                factor.resolve(base);
            }
        }
    }

    pub fn build(&self) -> Result<GaussianPrior> {
        let wrap = |loc: &str, e: EsmdaError| match e {
            EsmdaError::Config { .. } | EsmdaError::Io { .. } | EsmdaError::Csv { .. } => e,
            EsmdaError::Dimension {
                expected, found, ..
            } => dim_err(loc, expected, found),
            other => config_err(loc, other.to_string()),
        };
        match self {
            PriorSpec::Diagonal { mean, std_devs } => {
                let mean = DVector::from_vec(mean.load().map_err(|e| wrap("prior.mean", e))?);
                let sd = std_devs.load().map_err(|e| wrap("prior.std_devs", e))?;
                GaussianPrior::diagonal(mean, &sd).map_err(|e| wrap("prior.std_devs", e))
            }
            PriorSpec::Full { mean, covariance } => {
                let mean = DVector::from_vec(mean.load().map_err(|e| wrap("prior.mean", e))?);
                let cov = covariance.load("prior.covariance")?;
                GaussianPrior::from_covariance(mean, cov).map_err(|e| wrap("prior.covariance", e))
            }
            PriorSpec::Factor { mean, factor } => {
                let mean = DVector::from_vec(mean.load().map_err(|e| wrap("prior.mean", e))?);
                let l = factor.load("prior.factor")?;
                GaussianPrior::new(mean, l).map_err(|e| wrap("prior.factor", e))
            }
        }
    }
}

impl ForwardSpec {
    fn resolve(&mut self, base: &Path) {
        if let ForwardSpec::Linear { g, bias } = self {
            g.resolve(base);
            if let Some(b) = bias {
                b.resolve(base);
            }
        }
    }

    pub fn build(&self) -> Result<BuiltinModel> {
        match self {
            ForwardSpec::Linear { g, bias } => {
                let g = g.load("forward_model.G")?;
                let bias = match bias {
                    Some(b) => b.load()?,
                    None => vec![0.0; g.nrows()],
                };
                if bias.len() != g.nrows() {
                    return Err(dim_err("forward_model.bias", g.nrows(), bias.len()));
                }
                LinearModel::new(g, DVector::from_vec(bias))
                    .map(BuiltinModel::Linear)
                    .map_err(|e| config_err("forward_model", e.to_string()))
            }
            ForwardSpec::Decline { times } => DeclineCurveModel::new(times.clone())
                .map(BuiltinModel::Decline)
                .map_err(|e| config_err("forward_model.times", e.to_string())),
        }
    }
}

impl RunConfig {
    /// Parses JSON text, reporting the JSON path of any error.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            config_err(
                if path.is_empty() || path == "." {
                    "<root>"
                } else {
                    &path
                },
                format!("{inner} (line {}, column {})", inner.line(), inner.column()),
            )
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        self.prior.resolve(base);
        self.forward_model.resolve(base);
        self.d_hist.resolve(base);
        self.noise_std.resolve(base);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    /// Loads every input and checks all cross-dimensions.
    pub fn problem(&self) -> Result<Problem> {
        if self.n_e < 2 {
            return Err(config_err(
                "n_e",
                format!("ensemble size must be at least 2, found {}", self.n_e),
            ));
        }
        if self.parallelism == 0 {
            return Err(config_err("parallelism", "must be at least 1"));
        }
        self.solver
            .check()
            .map_err(|e| config_err("solver.energy_fraction", e.to_string()))?;
        let schedule = self
            .schedule
            .build()
            .map_err(|e| config_err("schedule", e.to_string()))?;
        let schedule_report = schedule.validate();
        if !schedule_report.valid && !self.allow_schedule_violation {
            return Err(EsmdaError::ScheduleViolation {
                residual: schedule_report.residual,
            });
        }

        let prior = self.prior.build()?;
        let model = self.forward_model.build()?;
        if model.n_m() != prior.dim() {
            return Err(dim_err(
                "forward_model (parameter count vs prior.mean)",
                prior.dim(),
                model.n_m(),
            ));
        }
        let n_d = model.n_d();
        let d_hist = DataVector::new(self.d_hist.load()?)
            .map_err(|e| config_err("d_hist", e.to_string()))?;
        if d_hist.len() != n_d {
            return Err(dim_err("d_hist", n_d, d_hist.len()));
        }
        let noise = NoiseModel::new(self.noise_std.load()?)
            .map_err(|e| config_err("noise_std", e.to_string()))?;
        if noise.len() != n_d {
            return Err(dim_err("noise_std", n_d, noise.len()));
        }
        if matches!(self.solver, SolverChoice::Subspace { .. }) && !noise.zero_indices().is_empty()
        {
            return Err(config_err(
                "noise_std",
                format!(
                    "subspace solver requires positive std devs; zero at {:?}",
                    noise.zero_indices()
                ),
            ));
        }
        Ok(Problem {
            prior,
            model,
            d_hist,
            noise,
            schedule,
            schedule_report,
        })
    }
}

/// Reads, resolves and fully validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| EsmdaError::Io {
        path: path.into(),
        source: e,
    })?;
    let mut config = RunConfig::from_json(&text)?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    config.resolve_paths(&base);
    config.problem()?;
    Ok(config)
}

/// Writes `config` as pretty JSON.
pub fn write_config(config: &RunConfig, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| EsmdaError::Io {
        path: path.into(),
        source: e,
    })?;
    serde_json::to_writer_pretty(file, config)?;
    Ok(())
}
