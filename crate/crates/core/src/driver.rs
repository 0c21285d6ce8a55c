//! The ES-MDA loop.

use crate::analysis::{
    analysis_update, data_mismatch, perturb_observations, NoiseModel, SolverChoice,
};
use crate::config::RunConfig;
use crate::ensemble::{sample_prior, DataVector, Ensemble, GaussianPrior};
use crate::error::Result;
use crate::forward::{evaluate_batch, ForwardModel, RunCounter};
use crate::record::{IterationRecord, RunRecord};
use crate::rng::StreamSeed;
use crate::schedule::AlphaSchedule;

/// Settings of one run that are not part of the inverse problem itself.
#[derive(Debug, Clone, Copy)]
pub struct RunSettings {
    pub seed: u64,
    pub n_e: usize,
    pub solver: SolverChoice,
    pub parallelism: usize,
}

/// Runs ES-MDA: sample the prior, then for every `α_ℓ` forecast, perturb the
/// observations and update; finally forecast the last ensemble once more.
///
/// The schedule is used as given; normalization is the caller's concern and
/// is only recorded here.
pub fn run_esmda_with(
    prior: &GaussianPrior,
    model: &dyn ForwardModel,
    d_hist: &DataVector,
    noise: &NoiseModel,
    schedule: &AlphaSchedule,
    settings: RunSettings,
) -> Result<RunRecord> {
    let seed = StreamSeed(settings.seed);
    let mut counter = RunCounter::default();
    let mut models = sample_prior(prior, settings.n_e, seed)?;
    let mut ensembles = vec![models.clone()];
    let mut iterations = Vec::with_capacity(schedule.n_a());

    for (idx, &alpha) in schedule.alphas().iter().enumerate() {
        let iteration = idx + 1;
        let mut step = || -> Result<(Ensemble, Vec<f64>, f64)> {
            let sims = evaluate_batch(model, &models, settings.parallelism, &mut counter)?;
            let mismatch = data_mismatch(&sims, d_hist, noise)?;
            let perturbed =
                perturb_observations(d_hist, noise, alpha, seed, iteration, settings.n_e)?;
            let updated =
                analysis_update(&models, &sims, &perturbed, noise, alpha, settings.solver)?;
            Ok((updated, mismatch.per_member, mismatch.mean))
        };
        let (updated, member_mismatch, mean_mismatch) =
            step().map_err(|e| e.at_iteration(iteration))?;
        iterations.push(IterationRecord {
            iteration,
            alpha,
            mean_mismatch,
            member_mismatch,
        });
        models = updated;
        ensembles.push(models.clone());
    }

    let final_iteration = schedule.n_a() + 1;
    let final_forecast = evaluate_batch(model, &models, settings.parallelism, &mut counter)
        .map_err(|e| e.at_iteration(final_iteration))?;
    let final_mismatch = data_mismatch(&final_forecast, d_hist, noise)
        .map_err(|e| e.at_iteration(final_iteration))?;

    Ok(RunRecord {
        seed: settings.seed,
        n_e: settings.n_e,
        solver: settings.solver,
        schedule: schedule.clone(),
        schedule_report: schedule.validate(),
        ensembles,
        iterations,
        final_forecast,
        final_mismatch,
        evaluations: counter.total(),
    })
}

/// Runs the problem described by a config.
pub fn run_esmda(config: &RunConfig) -> Result<RunRecord> {
    let problem = config.problem()?;
    run_esmda_with(
        &problem.prior,
        &problem.model,
        &problem.d_hist,
        &problem.noise,
        &problem.schedule,
        RunSettings {
            seed: config.seed,
            n_e: config.n_e,
            solver: config.solver,
            parallelism: config.parallelism,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::analysis_update_dense;
    use crate::forward::LinearModel;
    use nalgebra::{DMatrix, DVector};

    fn scalar_problem(sigma: f64) -> (GaussianPrior, LinearModel, DataVector, NoiseModel) {
        (
            GaussianPrior::diagonal(DVector::zeros(1), &[1.0]).unwrap(),
            LinearModel::new(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap(),
            DataVector::new(vec![1.0]).unwrap(),
            NoiseModel::new(vec![sigma]).unwrap(),
        )
    }

    #[test]
    fn scalar_two_pass_posterior() {
        let (prior, model, d, noise) = scalar_problem(1.0);
        let rec = run_esmda_with(
            &prior,
            &model,
            &d,
            &noise,
            &AlphaSchedule::equal_weights(2).unwrap(),
            RunSettings {
                seed: 3,
                n_e: 10_000,
                solver: SolverChoice::Dense,
                parallelism: 1,
            },
        )
        .unwrap();
        let post = rec.final_ensemble();
        let mean = post.mean()[0];
        let var = post.covariance()[(0, 0)];
        assert!(
            (mean - 0.5).abs() <= 3.0 * (0.5f64 / 10_000.0).sqrt(),
            "mean {mean}"
        );
        assert!((var - 0.5).abs() <= 0.05, "var {var}");
        assert_eq!(rec.evaluations, 3 * 10_000);
    }

    #[test]
    fn single_pass_equals_direct_update() {
        let (prior, model, d, noise) = scalar_problem(0.7);
        let settings = RunSettings {
            seed: 21,
            n_e: 50,
            solver: SolverChoice::Dense,
            parallelism: 1,
        };
        let rec = run_esmda_with(
            &prior,
            &model,
            &d,
            &noise,
            &AlphaSchedule::equal_weights(1).unwrap(),
            settings,
        )
        .unwrap();
        let m0 = sample_prior(&prior, 50, StreamSeed(21)).unwrap();
        let sims = evaluate_batch(&model, &m0, 1, &mut RunCounter::default()).unwrap();
        let pert = perturb_observations(&d, &noise, 1.0, StreamSeed(21), 1, 50).unwrap();
        let direct = analysis_update_dense(&m0, &sims, &pert, &noise, 1.0).unwrap();
        assert_eq!(rec.final_ensemble(), &direct);
    }

    #[test]
    fn uninformative_data_keeps_prior() {
        let (prior, model, d, noise) = scalar_problem(1e6);
        let rec = run_esmda_with(
            &prior,
            &model,
            &d,
            &noise,
            &AlphaSchedule::equal_weights(4).unwrap(),
            RunSettings {
                seed: 5,
                n_e: 200,
                solver: SolverChoice::Dense,
                parallelism: 1,
            },
        )
        .unwrap();
        let shift = rec.final_ensemble().mean()[0] - rec.ensembles[0].mean()[0];
        assert!(shift.abs() < 0.01, "shift {shift}");
    }

    #[test]
    fn errors_carry_iteration() {
        let (prior, _, _, _) = scalar_problem(1.0);
        // identical simulations and no noise make the system singular
        let flat = LinearModel::new(DMatrix::zeros(1, 1), DVector::zeros(1)).unwrap();
        let err = run_esmda_with(
            &prior,
            &flat,
            &DataVector::new(vec![1.0]).unwrap(),
            &NoiseModel::new(vec![0.0]).unwrap(),
            &AlphaSchedule::equal_weights(2).unwrap(),
            RunSettings {
                seed: 1,
                n_e: 10,
                solver: SolverChoice::Dense,
                parallelism: 1,
            },
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("iteration 1:"), "{err}");
        assert!(!err.is_config_error());
    }
}
