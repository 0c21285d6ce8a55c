//! Forward models `g(m)` and the batch evaluator.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ensemble::{DataVector, Ensemble, ModelVector};
use crate::error::{EsmdaError, Result};

/// Deterministic, side-effect free map from a model vector to simulated data.
pub trait ForwardModel: Send + Sync {
    fn n_m(&self) -> usize;
    fn n_d(&self) -> usize;
    fn evaluate(&self, m: &[f64]) -> Result<Vec<f64>>;
}

/// `g(m) = G m + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    g: DMatrix<f64>,
    bias: DVector<f64>,
}

impl LinearModel {
    pub fn new(g: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        if g.nrows() != bias.len() {
            return Err(EsmdaError::dim("linear model bias", g.nrows(), bias.len()));
        }
        if g.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(EsmdaError::NonFinite("linear model".into()));
        }
        Ok(Self { g, bias })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn apply(&self, m: &ModelVector) -> Result<DataVector> {
        DataVector::new(self.evaluate(m)?)
    }
}

impl ForwardModel for LinearModel {
    fn n_m(&self) -> usize {
        self.g.ncols()
    }

    fn n_d(&self) -> usize {
        self.g.nrows()
    }

    fn evaluate(&self, m: &[f64]) -> Result<Vec<f64>> {
        if m.len() != self.n_m() {
            return Err(EsmdaError::dim("linear model input", self.n_m(), m.len()));
        }
        let d = &self.g * DVector::from_column_slice(m) + &self.bias;
        Ok(d.data.into())
    }
}

/// Exponential rate decline `q(t) = exp(m_0 - exp(m_1) t)`, i.e. initial rate
/// `q_i = exp(m_0)` and decline constant `D = exp(m_1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeclineCurveModel {
    times: Vec<f64>,
}

impl DeclineCurveModel {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(EsmdaError::InvalidArgument(
                "decline model needs at least one time".into(),
            ));
        }
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(EsmdaError::InvalidArgument(
                "decline times must be finite and non-negative".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EsmdaError::InvalidArgument(
                "decline times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn apply(&self, m: &ModelVector) -> Result<DataVector> {
        DataVector::new(self.evaluate(m)?)
    }
}

impl ForwardModel for DeclineCurveModel {
    fn n_m(&self) -> usize {
        2
    }

    fn n_d(&self) -> usize {
        self.times.len()
    }

    fn evaluate(&self, m: &[f64]) -> Result<Vec<f64>> {
        if m.len() != 2 {
            return Err(EsmdaError::dim("decline model input", 2, m.len()));
        }
        let decline = m[1].exp();
        let q: Vec<f64> = self
            .times
            .iter()
            .map(|t| (m[0] - decline * t).exp())
            .collect();
        if q.iter().any(|v| !v.is_finite()) || !decline.is_finite() {
            return Err(EsmdaError::NonFinite("decline curve output".into()));
        }
        Ok(q)
    }
}

/// Total forward-model evaluations performed so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunCounter {
    total: u64,
}

impl RunCounter {
    pub fn total(&self) -> u64 {
        self.total
    }

    fn add(&mut self, n: usize) {
        self.total += n as u64;
    }
}

/// Evaluates `g` on every member, fanning out over up to `parallelism`
/// worker threads. Output member `j` is always `g(m_j)`.
pub fn evaluate_batch(
    model: &dyn ForwardModel,
    e: &Ensemble,
    parallelism: usize,
    counter: &mut RunCounter,
) -> Result<Ensemble> {
    if e.dim() != model.n_m() {
        return Err(EsmdaError::dim("forward model input", model.n_m(), e.dim()));
    }
    let eval = |j: usize| -> Result<Vec<f64>> {
        let d = model.evaluate(e.member(j))?;
        if d.len() != model.n_d() {
            return Err(EsmdaError::dim(
                "forward model output",
                model.n_d(),
                d.len(),
            ));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(EsmdaError::ForwardNonFinite { member: j });
        }
        Ok(d)
    };
    let results: Vec<Result<Vec<f64>>> = if parallelism <= 1 {
        (0..e.n_e()).map(eval).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|err| EsmdaError::InvalidArgument(format!("thread pool: {err}")))?;
        pool.install(|| (0..e.n_e()).into_par_iter().map(eval).collect())
    };
    let mut flat = Vec::with_capacity(model.n_d() * e.n_e());
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(d) => flat.extend(d),
            Err(EsmdaError::NonFinite(_)) => {
                return Err(EsmdaError::ForwardNonFinite { member: j })
            }
            Err(err) => return Err(err),
        }
    }
    let sims = Ensemble::from_matrix(DMatrix::from_vec(model.n_d(), e.n_e(), flat), e.iteration())?;
    counter.add(e.n_e());
    Ok(sims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamSeed};
    use approx::assert_relative_eq;

    fn random_ensemble(seed: u64, dim: usize, n_e: usize) -> Ensemble {
        let s = StreamSeed(seed);
        let rows: Vec<Vec<f64>> = (0..n_e)
            .map(|j| s.standard_normals(Purpose::User, 0, j, dim))
            .collect();
        Ensemble::from_members(&rows, 0).unwrap()
    }

    #[test]
    fn identity_model_returns_input() {
        let model = LinearModel::new(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        let e = random_ensemble(1, 3, 6);
        let mut c = RunCounter::default();
        let sims = evaluate_batch(&model, &e, 1, &mut c).unwrap();
        assert_eq!(sims.matrix(), e.matrix());
        assert_eq!(c.total(), 6);
    }

    #[test]
    fn decline_at_time_zero_is_initial_rate() {
        let model = DeclineCurveModel::new(vec![0.0]).unwrap();
        let e = random_ensemble(2, 2, 5);
        let sims = evaluate_batch(&model, &e, 1, &mut RunCounter::default()).unwrap();
        for j in 0..5 {
            assert_eq!(sims.member(j)[0], e.member(j)[0].exp());
        }
    }

    #[test]
    fn parallel_matches_serial_bitwise() {
        let model = DeclineCurveModel::new((0..10).map(|k| k as f64 * 0.3).collect()).unwrap();
        let e = random_ensemble(3, 2, 100);
        let mut c1 = RunCounter::default();
        let mut c8 = RunCounter::default();
        let a = evaluate_batch(&model, &e, 1, &mut c1).unwrap();
        let b = evaluate_batch(&model, &e, 8, &mut c8).unwrap();
        assert_eq!(a.matrix().as_slice(), b.matrix().as_slice());
        assert_eq!(c1, c8);
    }

    #[test]
    fn shuffled_members_give_shuffled_outputs() {
        let model = DeclineCurveModel::new(vec![0.5, 1.0, 4.0]).unwrap();
        let e = random_ensemble(4, 2, 20);
        let order: Vec<usize> = (0..20).map(|k| (k * 7) % 20).collect();
        let mut inverse = vec![0; 20];
        for (k, &j) in order.iter().enumerate() {
            inverse[j] = k;
        }
        let mut c = RunCounter::default();
        let direct = evaluate_batch(&model, &e, 4, &mut c).unwrap();
        let shuffled = evaluate_batch(&model, &e.permuted(&order), 4, &mut c).unwrap();
        assert_eq!(shuffled.permuted(&inverse).matrix(), direct.matrix());
    }

    #[test]
    fn non_finite_output_names_member() {
        let model = DeclineCurveModel::new(vec![0.0, 1.0]).unwrap();
        let e =
            Ensemble::from_members(&[vec![0.0, 0.0], vec![800.0, 0.0], vec![0.0, 0.0]], 0).unwrap();
        let mut c = RunCounter::default();
        match evaluate_batch(&model, &e, 2, &mut c) {
            Err(EsmdaError::ForwardNonFinite { member }) => assert_eq!(member, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(c.total(), 0);
    }

    #[test]
    fn linear_apply_examples() {
        let zero =
            LinearModel::new(DMatrix::zeros(2, 3), DVector::from_vec(vec![1.5, -2.0])).unwrap();
        let m = ModelVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(zero.apply(&m).unwrap().as_slice(), &[1.5, -2.0]);

        let row = LinearModel::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::zeros(1),
        )
        .unwrap();
        let m = ModelVector::new(vec![2.0, 3.0]).unwrap();
        assert_eq!(row.apply(&m).unwrap().as_slice(), &[5.0]);
    }

    #[test]
    fn linear_apply_matches_dot_product_oracle() {
        let s = StreamSeed(9);
        let (n_d, n_m) = (5, 4);
        let g = s.standard_normals(Purpose::User, 0, 0, n_d * n_m);
        let bias = s.standard_normals(Purpose::User, 0, 1, n_d);
        let m = s.standard_normals(Purpose::User, 0, 2, n_m);
        let model = LinearModel::new(
            DMatrix::from_row_slice(n_d, n_m, &g),
            DVector::from_vec(bias.clone()),
        )
        .unwrap();
        let out = model.apply(&ModelVector::new(m.clone()).unwrap()).unwrap();
        for k in 0..n_d {
            let mut acc = bias[k];
            for i in 0..n_m {
                acc += g[k * n_m + i] * m[i];
            }
            assert!((out[k] - acc).abs() <= 1e-14 * acc.abs().max(1.0));
        }
    }

    #[test]
    fn decline_apply_examples() {
        let model = DeclineCurveModel::new(vec![0.0, 10.0, 1e6]).unwrap();
        let out = model
            .apply(&ModelVector::new(vec![0.0, -745.0]).unwrap())
            .unwrap();
        for q in out.iter() {
            assert_relative_eq!(*q, 1.0, epsilon = 1e-12);
        }

        let m = ModelVector::new(vec![100f64.ln(), 0.5f64.ln()]).unwrap();
        let at0 = DeclineCurveModel::new(vec![0.0])
            .unwrap()
            .apply(&m)
            .unwrap();
        assert_relative_eq!(at0[0], 100.0, max_relative = 1e-15);
        let at2 = DeclineCurveModel::new(vec![2.0])
            .unwrap()
            .apply(&m)
            .unwrap();
        // 100/e
        assert_relative_eq!(at2[0], 36.787944117144233, max_relative = 1e-14);

        let overflow = DeclineCurveModel::new(vec![0.0])
            .unwrap()
            .evaluate(&[1000.0, 0.0]);
        assert!(matches!(overflow, Err(EsmdaError::NonFinite(_))));
    }

    #[test]
    fn decline_is_strictly_decreasing() {
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 0.25).collect();
        let model = DeclineCurveModel::new(times).unwrap();
        let q = model.evaluate(&[1.0, -0.5]).unwrap();
        assert!(q.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn decline_times_validated() {
        assert!(DeclineCurveModel::new(vec![1.0, 1.0]).is_err());
        assert!(DeclineCurveModel::new(vec![-1.0, 1.0]).is_err());
        assert!(DeclineCurveModel::new(vec![]).is_err());
    }
}
