//! Closed-form posterior of a linear model with Gaussian prior and noise,
//! used as ground truth for ES-MDA runs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::NoiseModel;
use crate::ensemble::{DataVector, Ensemble, GaussianPrior};
use crate::error::{EsmdaError, Result};
use crate::forward::{ForwardModel, LinearModel};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Kalman/Bayes update of `prior` given `d_hist = G m + bias + ε`, `ε ~ N(0, C_D)`.
pub fn exact_posterior(
    prior: &GaussianPrior,
    model: &LinearModel,
    d_hist: &DataVector,
    noise: &NoiseModel,
) -> Result<GaussianPosterior> {
    let n_m = prior.dim();
    let n_d = d_hist.len();
    if model.n_m() != n_m {
        return Err(EsmdaError::dim("linear model parameters", n_m, model.n_m()));
    }
    if model.n_d() != n_d {
        return Err(EsmdaError::dim("linear model data", n_d, model.n_d()));
    }
    if noise.len() != n_d {
        return Err(EsmdaError::dim("noise std_devs", n_d, noise.len()));
    }
    if !noise.zero_indices().is_empty() {
        return Err(EsmdaError::InvalidArgument(
            "exact posterior needs positive noise std devs".into(),
        ));
    }
    if !prior.is_full_rank() {
        return Err(EsmdaError::InvalidArgument(
            "exact posterior needs a full-rank prior".into(),
        ));
    }
    let g = model.matrix();
    let c_m = prior.covariance();
    let cm_gt = &c_m * g.transpose();
    let mut innovation = g * &cm_gt;
    for k in 0..n_d {
        innovation[(k, k)] += noise.variance(k);
    }
    let chol = innovation.cholesky().ok_or_else(|| EsmdaError::Singular {
        indices: (0..n_d).collect(),
    })?;
    let residual = DVector::from_column_slice(d_hist.as_slice()) - g * prior.mean() - model.bias();
    let mean = prior.mean() + &cm_gt * chol.solve(&residual);
    let mut covariance = &c_m - &cm_gt * chol.solve(&cm_gt.transpose());
    covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(GaussianPosterior { mean, covariance })
}

/// How far an ensemble's moments are from a reference Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDistance {
    /// `|mean_i(e) - truth.mean_i| / sqrt(truth.cov_ii)` per component.
    pub mean_error: Vec<f64>,
    /// `max |cov(e) - truth.cov| / max |truth.cov|`.
    pub covariance_error: f64,
}

impl PosteriorDistance {
    pub fn max_mean_error(&self) -> f64 {
        self.mean_error.iter().copied().fold(0.0, f64::max)
    }
}

pub fn posterior_distance(e: &Ensemble, truth: &GaussianPosterior) -> Result<PosteriorDistance> {
    if e.dim() != truth.mean.len() {
        return Err(EsmdaError::dim(
            "ensemble dimension",
            truth.mean.len(),
            e.dim(),
        ));
    }
    let mean = e.mean();
    let cov = e.covariance();
    let mean_error = (0..e.dim())
        .map(|i| (mean[i] - truth.mean[i]).abs() / truth.covariance[(i, i)].sqrt())
        .collect();
    let covariance_error = (&cov - &truth.covariance).amax() / truth.covariance.amax();
    Ok(PosteriorDistance {
        mean_error,
        covariance_error,
    })
}
