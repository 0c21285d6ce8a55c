//! Ensemble containers, prior sampling and ensemble statistics.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{EsmdaError, Result};
use crate::rng::{Purpose, StreamSeed};

macro_rules! finite_vector {
    ($(#[$doc:meta])* $name:ident, $what:literal) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Result<Self> {
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(EsmdaError::NonFinite(format!("{} entry {}", $what, i)));
                }
                Ok(Self(values))
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }
        }

        impl std::ops::Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

finite_vector!(
    /// One realization of the model parameters.
    ModelVector,
    "model vector"
);
finite_vector!(
    /// Observed or simulated data.
    DataVector,
    "data vector"
);

/// `N_e` realizations stored column-wise (`dimension × N_e`).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
    iteration: usize,
}

impl Ensemble {
    /// Wraps a `dimension × N_e` matrix whose columns are members.
    pub fn from_matrix(members: DMatrix<f64>, iteration: usize) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(EsmdaError::EnsembleSize(members.ncols()));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(EsmdaError::NonFinite("ensemble".into()));
        }
        Ok(Self { members, iteration })
    }

    pub fn from_members(members: &[Vec<f64>], iteration: usize) -> Result<Self> {
        let n_e = members.len();
        if n_e < 2 {
            return Err(EsmdaError::EnsembleSize(n_e));
        }
        let dim = members[0].len();
        for m in members {
            if m.len() != dim {
                return Err(EsmdaError::dim("ensemble member length", dim, m.len()));
            }
        }
        let flat: Vec<f64> = members.iter().flatten().copied().collect();
        Self::from_matrix(DMatrix::from_vec(dim, n_e, flat), iteration)
    }

    pub fn n_e(&self) -> usize {
        self.members.ncols()
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.members
    }

    pub fn member(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.members.as_slice()[j * d..(j + 1) * d]
    }

    pub fn members(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n_e()).map(move |j| self.member(j))
    }

    /// Same members in a new order: output member `k` is input member `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let cols: Vec<_> = order.iter().map(|&j| self.members.column(j)).collect();
        Self {
            members: DMatrix::from_columns(&cols),
            iteration: self.iteration,
        }
    }

    /// Componentwise mean over members.
    ///
    /// Accumulates deviations from the first member in ascending member
    /// order, so an ensemble of identical members has exactly that member as
    /// its mean.
    pub fn mean(&self) -> DVector<f64> {
        let n = self.n_e();
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|i| {
                let x0 = self.members[(i, 0)];
                let mut acc = 0.0;
                for j in 0..n {
                    acc += self.members[(i, j)] - x0;
                }
                x0 + acc / n as f64
            }),
        )
    }

    /// Anomaly factor `A` with column `j = (member_j - mean) / sqrt(N_e - 1)`,
    /// so that `A Aᵀ` is the unbiased sample covariance.
    pub fn anomalies(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let scale = ((self.n_e() - 1) as f64).sqrt();
        let mut a = self.members.clone();
        for mut col in a.column_iter_mut() {
            for (v, m) in col.iter_mut().zip(mean.iter()) {
                *v = (*v - m) / scale;
            }
        }
        a
    }

    /// Unbiased sample covariance (`dimension × dimension`).
    pub fn covariance(&self) -> DMatrix<f64> {
        let a = self.anomalies();
        &a * a.transpose()
    }

    /// CSV with header `{prefix}_0..{prefix}_{dim-1}`, one row per member.
    pub fn write_csv<W: Write>(&self, out: W, prefix: &str) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let csv_err = |e: csv::Error| EsmdaError::Csv {
            path: "<ensemble>".into(),
            message: e.to_string(),
        };
        w.write_record((0..self.dim()).map(|i| format!("{prefix}_{i}")))
            .map_err(csv_err)?;
        for m in self.members() {
            w.write_record(m.iter().map(|v| format_f64(*v)))
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| EsmdaError::Io {
            path: "<ensemble>".into(),
            source: e,
        })
    }

    /// Reads the format produced by [`Ensemble::write_csv`].
    pub fn read_csv<R: Read>(input: R, iteration: usize) -> Result<Self> {
        let rows = read_numeric_csv(input, true, "<ensemble>")?;
        Self::from_members(&rows, iteration)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Parses a comma-separated numeric table, optionally skipping a header row.
pub(crate) fn read_numeric_csv<R: Read>(
    input: R,
    has_header: bool,
    label: &str,
) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| EsmdaError::Csv {
            path: label.into(),
            message: e.to_string(),
        })?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.parse::<f64>().map_err(|e| EsmdaError::Csv {
                    path: label.into(),
                    message: format!("row {r}, column {c}: {field:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Gaussian prior `N(mean, L Lᵀ)` given by its lower-triangular factor `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianPrior {
    /// `factor` must be square, lower triangular, with a non-negative diagonal.
    pub fn new(mean: DVector<f64>, factor: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if factor.nrows() != n || factor.ncols() != n {
            return Err(EsmdaError::dim(
                "prior covariance factor",
                n,
                if factor.nrows() != n {
                    factor.nrows()
                } else {
                    factor.ncols()
                },
            ));
        }
        if mean.iter().chain(factor.iter()).any(|v| !v.is_finite()) {
            return Err(EsmdaError::NonFinite("prior".into()));
        }
        for i in 0..n {
            if factor[(i, i)] < 0.0 {
                return Err(EsmdaError::InvalidArgument(format!(
                    "prior factor diagonal entry {i} is negative"
                )));
            }
            for j in i + 1..n {
                if factor[(i, j)] != 0.0 {
                    return Err(EsmdaError::InvalidArgument(format!(
                        "prior factor is not lower triangular at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { mean, factor })
    }

    /// Independent components with the given standard deviations.
    pub fn diagonal(mean: DVector<f64>, std_devs: &[f64]) -> Result<Self> {
        if std_devs.len() != mean.len() {
            return Err(EsmdaError::dim(
                "prior std_devs",
                mean.len(),
                std_devs.len(),
            ));
        }
        Self::new(
            mean,
            DMatrix::from_diagonal(&DVector::from_column_slice(std_devs)),
        )
    }

    /// Factorizes a full SPD covariance once (Cholesky).
    pub fn from_covariance(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(EsmdaError::dim("prior covariance", n, covariance.nrows()));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 * covariance.amax().max(f64::MIN_POSITIVE) {
            return Err(EsmdaError::NotPositiveDefinite(
                "prior covariance is not symmetric".into(),
            ));
        }
        let chol = covariance.cholesky().ok_or_else(|| {
            EsmdaError::NotPositiveDefinite("prior covariance Cholesky failed".into())
        })?;
        Self::new(mean, chol.l())
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// All diagonal entries of the factor strictly positive.
    pub fn is_full_rank(&self) -> bool {
        self.factor.diagonal().iter().all(|&d| d > 0.0)
    }
}

/// Draws `n_e` members `mean + L z_j`, with `z_j` from prior substream `j`.
pub fn sample_prior(prior: &GaussianPrior, n_e: usize, seed: StreamSeed) -> Result<Ensemble> {
    if n_e < 2 {
        return Err(EsmdaError::EnsembleSize(n_e));
    }
    let n = prior.dim();
    let l = &prior.factor;
    let mut members = DMatrix::zeros(n, n_e);
    for j in 0..n_e {
        let z = seed.standard_normals(Purpose::Prior, 0, j, n);
        for i in 0..n {
            let mut acc = 0.0;
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                acc += l[(i, k)] * zk;
            }
            members[(i, j)] = prior.mean[i] + acc;
        }
    }
    Ensemble::from_matrix(members, 0)
}

/// Ensemble cross-covariance `C_md` and data covariance `C_dd`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCovariance {
    pub md: DMatrix<f64>,
    pub dd: DMatrix<f64>,
}

/// `C_md = A_m A_dᵀ`, `C_dd = A_d A_dᵀ` from member-aligned ensembles.
pub fn cross_covariances(models: &Ensemble, sims: &Ensemble) -> Result<CrossCovariance> {
    if models.n_e() != sims.n_e() {
        return Err(EsmdaError::dim(
            "cross-covariance ensemble size",
            models.n_e(),
            sims.n_e(),
        ));
    }
    let am = models.anomalies();
    let ad = sims.anomalies();
    let adt = ad.transpose();
    Ok(CrossCovariance {
        md: &am * &adt,
        dd: &ad * &adt,
    })
}
