//! Observation perturbation, the ES-MDA analysis update and the data-mismatch
//! objective.
//!
//! Two solvers share one contract. The dense path forms
//! `C = α C_D + C_dd` (`N_d × N_d`) and solves it by Cholesky. The subspace
//! path works on the noise-scaled data anomalies `Ã = C_D^{-1/2} A_d` and
//! their truncated SVD `Ã ≈ U_r S_r V_rᵀ`, using
//!
//! ```text
//! C_md (α C_D + C_dd)⁻¹ r = A_m V_r S_r (α I + S_r²)⁻¹ U_rᵀ C_D^{-1/2} r
//! ```
//!
//! which never builds a matrix with both an `N_m` or `N_d` side and an
//! `N_d` side.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::{cross_covariances, CrossCovariance, DataVector, Ensemble};
use crate::error::{EsmdaError, Result};
use crate::rng::{Purpose, StreamSeed};

/// Diagonal data-error covariance `C_D = diag(σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    std_devs: Vec<f64>,
}

impl NoiseModel {
    pub fn new(std_devs: Vec<f64>) -> Result<Self> {
        if let Some(i) = std_devs.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(EsmdaError::InvalidArgument(format!(
                "noise std dev {i} = {} must be finite and non-negative",
                std_devs[i]
            )));
        }
        Ok(Self { std_devs })
    }

    pub fn std_devs(&self) -> &[f64] {
        &self.std_devs
    }

    pub fn len(&self) -> usize {
        self.std_devs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.std_devs.is_empty()
    }

    pub fn variance(&self, k: usize) -> f64 {
        self.std_devs[k] * self.std_devs[k]
    }

    /// Data indices with `σ = 0`.
    pub fn zero_indices(&self) -> Vec<usize> {
        self.std_devs
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == 0.0)
            .map(|(k, _)| k)
            .collect()
    }
}

pub const DEFAULT_ENERGY_FRACTION: f64 = 0.999;

/// Which linear-algebra path the analysis step takes.
///
/// JSON form: `{"mode":"dense"}` or `{"mode":"subspace","energy_fraction":0.999}`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SolverSpec", into = "SolverSpec")]
pub enum SolverChoice {
    #[default]
    Dense,
    Subspace {
        /// Fraction of squared singular-value energy kept by the truncation.
        energy_fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SolverMode {
    Dense,
    Subspace,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSpec {
    mode: SolverMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    energy_fraction: Option<f64>,
}

impl TryFrom<SolverSpec> for SolverChoice {
    type Error = String;

    fn try_from(spec: SolverSpec) -> Result<Self, String> {
        match (spec.mode, spec.energy_fraction) {
            (SolverMode::Dense, None) => Ok(SolverChoice::Dense),
            (SolverMode::Dense, Some(_)) => {
                Err("energy_fraction only applies to the subspace solver".into())
            }
            (SolverMode::Subspace, ef) => Ok(SolverChoice::Subspace {
                energy_fraction: ef.unwrap_or(DEFAULT_ENERGY_FRACTION),
            }),
        }
    }
}

impl From<SolverChoice> for SolverSpec {
    fn from(choice: SolverChoice) -> Self {
        match choice {
            SolverChoice::Dense => SolverSpec {
                mode: SolverMode::Dense,
                energy_fraction: None,
            },
            SolverChoice::Subspace { energy_fraction } => SolverSpec {
                mode: SolverMode::Subspace,
                energy_fraction: Some(energy_fraction),
            },
        }
    }
}

impl SolverChoice {
    pub fn subspace() -> Self {
        SolverChoice::Subspace {
            energy_fraction: DEFAULT_ENERGY_FRACTION,
        }
    }

    pub fn check(&self) -> Result<()> {
        match *self {
            SolverChoice::Dense => Ok(()),
            SolverChoice::Subspace { energy_fraction } => {
                if energy_fraction > 0.0 && energy_fraction <= 1.0 {
                    Ok(())
                } else {
                    Err(EsmdaError::InvalidArgument(format!(
                        "energy_fraction {energy_fraction} must lie in (0, 1]"
                    )))
                }
            }
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(EsmdaError::InvalidArgument(format!(
            "alpha {alpha} must be positive and finite"
        )))
    }
}

/// `d_hist + sqrt(α) diag(σ) z_j` for given deviates (`N_d × N_e`).
pub fn perturb_with_deviates(
    d_hist: &DataVector,
    noise: &NoiseModel,
    alpha: f64,
    deviates: &DMatrix<f64>,
) -> Result<Ensemble> {
    check_alpha(alpha)?;
    let n_d = d_hist.len();
    if noise.len() != n_d {
        return Err(EsmdaError::dim("noise std_devs", n_d, noise.len()));
    }
    if deviates.nrows() != n_d {
        return Err(EsmdaError::dim(
            "perturbation deviates",
            n_d,
            deviates.nrows(),
        ));
    }
    let sqrt_alpha = alpha.sqrt();
    let mut out = deviates.clone();
    for mut col in out.column_iter_mut() {
        for (k, v) in col.iter_mut().enumerate() {
            *v = d_hist[k] + sqrt_alpha * noise.std_devs[k] * *v;
        }
    }
    Ensemble::from_matrix(out, 0)
}

/// Perturbed observations for pass `iteration`, member `j` drawing from its
/// own substream.
pub fn perturb_observations(
    d_hist: &DataVector,
    noise: &NoiseModel,
    alpha: f64,
    seed: StreamSeed,
    iteration: usize,
    n_e: usize,
) -> Result<Ensemble> {
    check_alpha(alpha)?;
    if n_e < 2 {
        return Err(EsmdaError::EnsembleSize(n_e));
    }
    let n_d = d_hist.len();
    let mut z = Vec::with_capacity(n_d * n_e);
    for j in 0..n_e {
        z.extend(seed.standard_normals(Purpose::Perturbation, iteration, j, n_d));
    }
    perturb_with_deviates(d_hist, noise, alpha, &DMatrix::from_vec(n_d, n_e, z))
}

fn check_aligned(
    models: &Ensemble,
    sims: &Ensemble,
    perturbed: &Ensemble,
    noise: &NoiseModel,
) -> Result<()> {
    if sims.n_e() != models.n_e() {
        return Err(EsmdaError::dim(
            "simulated ensemble size",
            models.n_e(),
            sims.n_e(),
        ));
    }
    if perturbed.n_e() != models.n_e() {
        return Err(EsmdaError::dim(
            "perturbed data ensemble size",
            models.n_e(),
            perturbed.n_e(),
        ));
    }
    if perturbed.dim() != sims.dim() {
        return Err(EsmdaError::dim(
            "perturbed data length",
            sims.dim(),
            perturbed.dim(),
        ));
    }
    if noise.len() != sims.dim() {
        return Err(EsmdaError::dim("noise std_devs", sims.dim(), noise.len()));
    }
    Ok(())
}

/// Cholesky that also refuses pivots negligible against the largest diagonal.
fn spd_cholesky(c: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let n = c.nrows();
    let max_diag = c.diagonal().amax();
    let chol = c.cholesky()?;
    let floor = n as f64 * f64::EPSILON * max_diag;
    let l = chol.l_dirty();
    if (0..n).all(|i| l[(i, i)] * l[(i, i)] > floor) {
        Some(chol)
    } else {
        None
    }
}

/// `C_md (α C_D + C_dd)⁻¹ R` for a residual matrix `R` (`N_d × N_e`).
///
/// On factorization failure a jitter of `1e-12·trace/N_d` is added to the
/// diagonal and the factorization retried once.
pub fn dense_increment(
    cov: &CrossCovariance,
    noise: &NoiseModel,
    alpha: f64,
    residuals: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_alpha(alpha)?;
    let n_d = cov.dd.nrows();
    let mut c = cov.dd.clone();
    for k in 0..n_d {
        c[(k, k)] += alpha * noise.variance(k);
    }
    let chol = match spd_cholesky(c.clone()) {
        Some(ch) => ch,
        None => {
            let jitter = 1e-12 * c.trace() / n_d as f64;
            for k in 0..n_d {
                c[(k, k)] += jitter;
            }
            match (jitter > 0.0).then(|| spd_cholesky(c)).flatten() {
                Some(ch) => ch,
                None => {
                    let mut indices = noise.zero_indices();
                    if indices.is_empty() {
                        indices = (0..n_d).collect();
                    }
                    return Err(EsmdaError::Singular { indices });
                }
            }
        }
    };
    Ok(&cov.md * chol.solve(residuals))
}

/// Reference analysis update with explicit ensemble covariances.
pub fn analysis_update_dense(
    models: &Ensemble,
    sims: &Ensemble,
    perturbed: &Ensemble,
    noise: &NoiseModel,
    alpha: f64,
) -> Result<Ensemble> {
    check_aligned(models, sims, perturbed, noise)?;
    let cov = cross_covariances(models, sims)?;
    let residuals = perturbed.matrix() - sims.matrix();
    let delta = dense_increment(&cov, noise, alpha, &residuals)?;
    Ensemble::from_matrix(models.matrix() + delta, models.iteration() + 1)
}

/// Ensemble-space analysis update through a truncated SVD of the scaled data
/// anomalies. Requires every `σ > 0`.
pub fn analysis_update_subspace(
    models: &Ensemble,
    sims: &Ensemble,
    perturbed: &Ensemble,
    noise: &NoiseModel,
    alpha: f64,
    energy_fraction: f64,
) -> Result<Ensemble> {
    check_alpha(alpha)?;
    SolverChoice::Subspace { energy_fraction }.check()?;
    check_aligned(models, sims, perturbed, noise)?;
    let zeros = noise.zero_indices();
    if !zeros.is_empty() {
        return Err(EsmdaError::InvalidArgument(format!(
            "subspace solver needs positive noise std devs; zero at data indices {zeros:?}"
        )));
    }
    let inv_sigma = DVector::from_iterator(noise.len(), noise.std_devs.iter().map(|s| 1.0 / s));

    let mut scaled = sims.anomalies();
    for mut col in scaled.column_iter_mut() {
        col.component_mul_assign(&inv_sigma);
    }
    let svd = scaled.svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let energy: Vec<f64> = order
        .iter()
        .map(|&i| svd.singular_values[i].powi(2))
        .collect();
    let total: f64 = energy.iter().sum();
    if total == 0.0 {
        return Ensemble::from_matrix(models.matrix().clone(), models.iteration() + 1);
    }
    let mut kept = 0;
    let mut cumulative = 0.0;
    for e in &energy {
        cumulative += e;
        kept += 1;
        if cumulative >= energy_fraction * total {
            break;
        }
    }
    let order = &order[..kept];

    let mut scaled_residuals = perturbed.matrix() - sims.matrix();
    for mut col in scaled_residuals.column_iter_mut() {
        col.component_mul_assign(&inv_sigma);
    }

    // W = diag(s/(α+s²)) U_rᵀ R̃   (r × N_e)
    let n_e = models.n_e();
    let mut w = DMatrix::zeros(kept, n_e);
    for (row, &i) in order.iter().enumerate() {
        let s = svd.singular_values[i];
        let gain = s / (alpha + s * s);
        let projected = u.column(i).transpose() * &scaled_residuals;
        w.row_mut(row).copy_from(&(projected * gain));
    }
    // Y = V_r W   (N_e × N_e)
    let mut v_r = DMatrix::zeros(n_e, kept);
    for (col, &i) in order.iter().enumerate() {
        v_r.column_mut(col).copy_from(&v_t.row(i).transpose());
    }
    let y = v_r * w;
    let delta = models.anomalies() * y;
    Ensemble::from_matrix(models.matrix() + delta, models.iteration() + 1)
}

/// Dispatches to the configured solver.
pub fn analysis_update(
    models: &Ensemble,
    sims: &Ensemble,
    perturbed: &Ensemble,
    noise: &NoiseModel,
    alpha: f64,
    solver: SolverChoice,
) -> Result<Ensemble> {
    match solver {
        SolverChoice::Dense => analysis_update_dense(models, sims, perturbed, noise, alpha),
        SolverChoice::Subspace { energy_fraction } => {
            analysis_update_subspace(models, sims, perturbed, noise, alpha, energy_fraction)
        }
    }
}

/// Normalized data mismatch of each simulated member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    /// `φ_j = (1/n) Σ_k ((d_sim,jk - d_hist,k)/σ_k)²` over the `n` data with `σ > 0`.
    pub per_member: Vec<f64>,
    pub mean: f64,
    /// Data indices left out because `σ = 0`.
    pub excluded: Vec<usize>,
}

pub fn data_mismatch(
    sims: &Ensemble,
    d_hist: &DataVector,
    noise: &NoiseModel,
) -> Result<MismatchReport> {
    if sims.dim() != d_hist.len() {
        return Err(EsmdaError::dim(
            "simulated data length",
            d_hist.len(),
            sims.dim(),
        ));
    }
    if noise.len() != d_hist.len() {
        return Err(EsmdaError::dim("noise std_devs", d_hist.len(), noise.len()));
    }
    let excluded = noise.zero_indices();
    let used: Vec<usize> = (0..d_hist.len())
        .filter(|k| noise.std_devs[*k] > 0.0)
        .collect();
    let per_member: Vec<f64> = sims
        .members()
        .map(|d| {
            if used.is_empty() {
                return 0.0;
            }
            let sum: f64 = used
                .iter()
                .map(|&k| ((d[k] - d_hist[k]) / noise.std_devs[k]).powi(2))
                .sum();
            sum / used.len() as f64
        })
        .collect();
    let mean = per_member.iter().sum::<f64>() / per_member.len() as f64;
    Ok(MismatchReport {
        per_member,
        mean,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ens(rows: &[Vec<f64>]) -> Ensemble {
        Ensemble::from_members(rows, 0).unwrap()
    }

    fn dv(v: &[f64]) -> DataVector {
        DataVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_noise_leaves_observations_unperturbed() {
        let d = dv(&[1.0, -2.5, 3.25]);
        let noise = NoiseModel::new(vec![0.0; 3]).unwrap();
        let p = perturb_observations(&d, &noise, 4.0, StreamSeed(3), 1, 6).unwrap();
        for m in p.members() {
            assert_eq!(m, d.as_slice());
        }
    }

    #[test]
    fn injected_deviate_example() {
        let p = perturb_with_deviates(
            &dv(&[1.0]),
            &NoiseModel::new(vec![2.0]).unwrap(),
            4.0,
            &DMatrix::from_row_slice(1, 2, &[0.5, 0.5]),
        )
        .unwrap();
        assert_eq!(p.member(0), &[3.0]);
    }

    #[test]
    fn non_positive_alpha_rejected() {
        let noise = NoiseModel::new(vec![1.0]).unwrap();
        for a in [0.0, -1.0, f64::NAN] {
            assert!(perturb_observations(&dv(&[0.0]), &noise, a, StreamSeed(1), 1, 4).is_err());
        }
    }

    #[test]
    fn perturbation_variance() {
        let noise = NoiseModel::new(vec![1.0]).unwrap();
        for seed in [1, 2, 3] {
            let p = perturb_observations(&dv(&[0.0]), &noise, 1.0, StreamSeed(seed), 1, 10_000)
                .unwrap();
            let var = p.covariance()[(0, 0)];
            assert!((var - 1.0).abs() < 0.1, "seed {seed}: {var}");
        }
    }

    #[test]
    fn zero_gain_is_bitwise_identity() {
        let models = ens(&[vec![0.3, 1.0], vec![-0.7, 2.0], vec![1.1, 0.1]]);
        let sims = ens(&vec![vec![0.1, 5.0]; 3]);
        let perturbed = ens(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let noise = NoiseModel::new(vec![0.5, 0.5]).unwrap();
        let dense = analysis_update_dense(&models, &sims, &perturbed, &noise, 2.0).unwrap();
        assert_eq!(dense.matrix(), models.matrix());
        assert_eq!(dense.iteration(), 1);
        let sub = analysis_update_subspace(&models, &sims, &perturbed, &noise, 2.0, 0.999).unwrap();
        assert!((sub.matrix() - models.matrix()).amax() <= 1e-14);
    }

    #[test]
    fn scalar_gain_example() {
        // members {0,2} give C_md = C_dd = 2; scale anomalies down to 1 via ±1/√2 spacing
        let h = 0.5f64.sqrt();
        let models = ens(&[vec![-h], vec![h]]);
        let sims = models.clone();
        let cov = cross_covariances(&models, &sims).unwrap();
        assert_relative_eq!(cov.md[(0, 0)], 1.0, epsilon = 1e-15);
        let noise = NoiseModel::new(vec![1.0]).unwrap();
        let perturbed = ens(&[vec![-h + 2.0], vec![h + 2.0]]);
        let out = analysis_update_dense(&models, &sims, &perturbed, &noise, 1.0).unwrap();
        for j in 0..2 {
            assert_relative_eq!(out.member(j)[0] - models.member(j)[0], 1.0, epsilon = 1e-15);
        }
        let sub = analysis_update_subspace(&models, &sims, &perturbed, &noise, 1.0, 0.999).unwrap();
        assert!((sub.matrix() - out.matrix()).amax() <= 1e-12);
    }

    #[test]
    fn singular_system_names_zero_noise_indices() {
        let models = ens(&[vec![0.0], vec![1.0]]);
        let sims = ens(&[vec![2.0, 3.0], vec![2.0, 3.0]]);
        let perturbed = sims.clone();
        let noise = NoiseModel::new(vec![0.0, 0.0]).unwrap();
        match analysis_update_dense(&models, &sims, &perturbed, &noise, 1.0) {
            Err(EsmdaError::Singular { indices }) => assert_eq!(indices, vec![0, 1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dense_allows_zero_noise_when_invertible() {
        let models = ens(&[vec![0.0], vec![1.0], vec![3.0]]);
        let sims = ens(&[vec![0.0], vec![1.0], vec![3.0]]);
        let perturbed = ens(&vec![vec![1.0]; 3]);
        let noise = NoiseModel::new(vec![0.0]).unwrap();
        let out = analysis_update_dense(&models, &sims, &perturbed, &noise, 1.0).unwrap();
        // identity map, no noise: every member jumps to the observation
        for m in out.members() {
            assert_relative_eq!(m[0], 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn subspace_rejects_zero_noise() {
        let models = ens(&[vec![0.0], vec![1.0]]);
        let sims = ens(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let noise = NoiseModel::new(vec![1.0, 0.0]).unwrap();
        assert!(analysis_update_subspace(&models, &sims, &sims, &noise, 1.0, 1.0).is_err());
    }

    #[test]
    fn scalar_subspace_matches_dense() {
        let models = ens(&[
            vec![0.2, 1.0],
            vec![-0.4, 0.5],
            vec![1.3, -0.2],
            vec![0.0, 0.9],
        ]);
        let sims = ens(&[vec![0.5], vec![-1.0], vec![2.0], vec![0.25]]);
        let perturbed = ens(&[vec![1.0], vec![0.7], vec![1.4], vec![0.9]]);
        let noise = NoiseModel::new(vec![0.8]).unwrap();
        let dense = analysis_update_dense(&models, &sims, &perturbed, &noise, 3.0).unwrap();
        let sub = analysis_update_subspace(&models, &sims, &perturbed, &noise, 3.0, 0.999).unwrap();
        assert!((dense.matrix() - sub.matrix()).amax() <= 1e-12);
    }

    #[test]
    fn mismatch_examples() {
        let d = dv(&[1.0, 2.0]);
        let one = NoiseModel::new(vec![1.0, 1.0]).unwrap();
        let exact = ens(&[vec![1.0, 2.0], vec![1.0, 2.0]]);
        let r = data_mismatch(&exact, &d, &one).unwrap();
        assert_eq!(r.per_member, vec![0.0, 0.0]);
        assert_eq!(r.mean, 0.0);

        let sims = ens(&[vec![2.0, 4.0], vec![0.0, 0.0]]);
        let r = data_mismatch(&sims, &d, &one).unwrap();
        assert_eq!(r.per_member, vec![2.5, 2.5]);

        let single = data_mismatch(
            &ens(&[vec![1.5], vec![0.5]]),
            &dv(&[1.0]),
            &NoiseModel::new(vec![0.5]).unwrap(),
        )
        .unwrap();
        assert_eq!(single.per_member, vec![1.0, 1.0]);

        let partial = data_mismatch(&sims, &d, &NoiseModel::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(partial.excluded, vec![1]);
        assert_eq!(partial.per_member, vec![1.0, 1.0]);
    }

    #[test]
    fn solver_choice_json() {
        let s: SolverChoice = serde_json::from_str(r#"{"mode":"subspace"}"#).unwrap();
        assert_eq!(s, SolverChoice::subspace());
        let s: SolverChoice = serde_json::from_str(r#"{"mode":"dense"}"#).unwrap();
        assert_eq!(s, SolverChoice::Dense);
        assert!(serde_json::from_str::<SolverChoice>(r#"{"mode":"dense","x":1}"#).is_err());
        assert!(
            serde_json::from_str::<SolverChoice>(r#"{"mode":"dense","energy_fraction":1}"#)
                .is_err()
        );
        let text = serde_json::to_string(&SolverChoice::subspace()).unwrap();
        assert_eq!(text, r#"{"mode":"subspace","energy_fraction":0.999}"#);
        assert!(serde_json::from_str::<SolverChoice>(
            r#"{"mode":"subspace","energy_fraction":0.9,"x":1}"#
        )
        .is_err());
    }
}
