//! Inflation-coefficient schedules.

use serde::{Deserialize, Serialize};

use crate::error::{EsmdaError, Result};

/// Tolerance on `|Σ 1/α - 1|`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Coefficients `α_1..α_Na`, one per assimilation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphaSchedule {
    alphas: Vec<f64>,
}

/// Outcome of [`AlphaSchedule::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub valid: bool,
    /// `Σ 1/α_ℓ - 1`.
    pub residual: f64,
    /// Indices of non-positive or non-finite coefficients.
    pub non_positive: Vec<usize>,
}

impl AlphaSchedule {
    /// Any non-empty sequence of positive finite coefficients. Normalization
    /// is checked separately by [`AlphaSchedule::validate`].
    pub fn explicit(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(EsmdaError::InvalidArgument(
                "alpha schedule is empty".into(),
            ));
        }
        if let Some(i) = alphas.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(EsmdaError::InvalidArgument(format!(
                "alpha[{i}] = {} is not a positive finite number",
                alphas[i]
            )));
        }
        Ok(Self { alphas })
    }

    /// `α_ℓ = N_a` for every pass.
    pub fn equal_weights(n_a: usize) -> Result<Self> {
        if n_a == 0 {
            return Err(EsmdaError::InvalidArgument(
                "number of assimilations must be at least 1".into(),
            ));
        }
        Ok(Self {
            alphas: vec![n_a as f64; n_a],
        })
    }

    /// `α_ℓ = a·ratio^(ℓ-1)` with `a = Σ_{k<N_a} ratio^(-k)`, which makes the
    /// inverses sum to one.
    pub fn geometric_decreasing(n_a: usize, ratio: f64) -> Result<Self> {
        if n_a == 0 {
            return Err(EsmdaError::InvalidArgument(
                "number of assimilations must be at least 1".into(),
            ));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(EsmdaError::InvalidArgument(format!(
                "geometric ratio {ratio} must lie in (0, 1)"
            )));
        }
        let a: f64 = (0..n_a).map(|k| ratio.powi(-(k as i32))).sum();
        Ok(Self {
            alphas: (0..n_a).map(|k| a * ratio.powi(k as i32)).collect(),
        })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn n_a(&self) -> usize {
        self.alphas.len()
    }

    pub fn validate(&self) -> ScheduleReport {
        validate(&self.alphas)
    }
}

/// Checks positivity and `|Σ 1/α - 1| ≤ 1e-12`.
pub fn validate(alphas: &[f64]) -> ScheduleReport {
    let non_positive: Vec<usize> = alphas
        .iter()
        .enumerate()
        .filter(|(_, a)| !(a.is_finite() && **a > 0.0))
        .map(|(i, _)| i)
        .collect();
    let residual = alphas.iter().map(|a| 1.0 / a).sum::<f64>() - 1.0;
    ScheduleReport {
        valid: !alphas.is_empty() && non_positive.is_empty() && residual.abs() <= NORMALIZATION_TOL,
        residual,
        non_positive,
    }
}
