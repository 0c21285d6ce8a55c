//! Ensemble smoother with multiple data assimilation (ES-MDA).
//!
//! An ensemble of model-parameter realizations sampled from a Gaussian prior
//! is conditioned on observed data by assimilating the same observations
//! `N_a` times, each time with the data-error covariance inflated by a
//! coefficient `α_ℓ`. With `Σ 1/α_ℓ = 1` and a linear forward model the final
//! ensemble samples the exact Gaussian posterior as the ensemble grows; the
//! [`oracle`] module computes that posterior in closed form.
//!
//! The crate is organized bottom-up:
//!
//! * [`ensemble`]: containers, prior sampling and ensemble covariances
//! * [`schedule`]: inflation-coefficient sequences
//! * [`analysis`]: observation perturbation and the analysis update
//! * [`forward`]: forward models and the parallel batch evaluator
//! * [`oracle`]: exact linear-Gaussian posterior
//! * [`config`], [`driver`], [`record`]: configuration, the ES-MDA loop and
//!   persisted output

pub mod analysis;
pub mod config;
pub mod driver;
pub mod ensemble;
pub mod error;
pub mod forward;
pub mod oracle;
pub mod record;
pub mod rng;
pub mod schedule;

pub use analysis::{
    analysis_update, analysis_update_dense, analysis_update_subspace, data_mismatch,
    dense_increment, perturb_observations, perturb_with_deviates, MismatchReport, NoiseModel,
    SolverChoice,
};
pub use config::{load_config, write_config, BuiltinModel, Problem, RunConfig};
pub use driver::{run_esmda, run_esmda_with, RunSettings};
pub use ensemble::{
    cross_covariances, sample_prior, CrossCovariance, DataVector, Ensemble, GaussianPrior,
    ModelVector,
};
pub use error::{EsmdaError, Result};
pub use forward::{evaluate_batch, DeclineCurveModel, ForwardModel, LinearModel, RunCounter};
pub use oracle::{exact_posterior, posterior_distance, GaussianPosterior, PosteriorDistance};
pub use record::{summarize, write_record, Diagnostics, RunRecord, SummaryRow};
pub use rng::{Purpose, StreamSeed};
pub use schedule::AlphaSchedule;
