//! Synthetic analysis-step inputs for benchmarks.

use esmda_core::{perturb_observations, DataVector, Ensemble, NoiseModel, Purpose, StreamSeed};
use nalgebra::DMatrix;

pub struct AnalysisInputs {
    pub models: Ensemble,
    pub sims: Ensemble,
    pub perturbed: Ensemble,
    pub noise: NoiseModel,
    pub alpha: f64,
}

/// Random linear-plus-noise instance of the given size.
pub fn analysis_inputs(n_m: usize, n_d: usize, n_e: usize) -> AnalysisInputs {
    let seed = StreamSeed(1);
    let draw = |slot: usize, n: usize| seed.standard_normals(Purpose::User, 0, slot, n);
    let models = DMatrix::from_vec(n_m, n_e, draw(0, n_m * n_e));
    let g = DMatrix::from_vec(n_d, n_m, draw(1, n_d * n_m)) / (n_m as f64).sqrt();
    let sims = g * &models + DMatrix::from_vec(n_d, n_e, draw(2, n_d * n_e)) * 0.1;
    let noise = NoiseModel::new(vec![0.5; n_d]).unwrap();
    let d = DataVector::new(draw(3, n_d)).unwrap();
    let alpha = 4.0;
    AnalysisInputs {
        models: Ensemble::from_matrix(models, 0).unwrap(),
        sims: Ensemble::from_matrix(sims, 0).unwrap(),
        perturbed: perturb_observations(&d, &noise, alpha, seed, 1, n_e).unwrap(),
        noise,
        alpha,
    }
}
