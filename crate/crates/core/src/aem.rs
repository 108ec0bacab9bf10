//! Approximation-error statistics and the noise whitener.
//!
//! Each training sample pairs an accurate solve on a randomly deformed fine
//! mesh with a surrogate solve on the mean-geometry fine mesh at the
//! literature conductivities, sharing the sampled contact resistances.

use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cem::CemModel;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::mesh::{deform_mesh, ElectrodeSizing, ReferenceMesh};
use crate::phantom::{rasterize_conductivity, sample_nuisance, NoiseModel, Table1, ELECTRODE_HALF_LENGTH};
use crate::scalar::Real;
use crate::shape::ShapeBasis;

/// Attempts per sample before training gives up on that sample.
const MAX_ATTEMPTS: u64 = 100;

/// Sample mean `ε*` and unbiased covariance `Γ_ε` of the approximation error.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModel {
    pub mean: Vec<f64>,
    pub covariance: DenseMatrix<f64>,
    pub info: TrainingInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub samples: usize,
    pub failed: usize,
    pub base_seed: u64,
    pub std_scale: f64,
    pub refinement: u32,
    pub surrogate: String,
    #[serde(default)]
    pub config_digest: String,
}

impl ErrorModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Inputs shared by all training samples.
#[derive(Debug, Clone)]
pub struct TrainingSetup {
    pub basis: Arc<ShapeBasis<f64>>,
    pub reference: Arc<ReferenceMesh<f64>>,
    pub table: Table1,
    /// Multiplier on every prior std (1 for the tabulated prior, 0 disables randomness).
    pub std_scale: f64,
    pub feed: usize,
}

/// Runs `sample(ℓ, rng)` for `ℓ = 1..=n_s` on a pool of `workers` threads and
/// reduces in `ℓ` order. Sample `ℓ` is seeded with `base_seed + ℓ`; after a
/// failure it is retried on the next stream of the same seed. The result
/// does not depend on `workers`.
pub fn train_with<F>(n_s: usize, base_seed: u64, workers: usize, sample: F) -> Result<(Vec<f64>, DenseMatrix<f64>, usize)>
where
    F: Fn(usize, &mut ChaCha8Rng) -> Result<Vec<f64>> + Sync,
{
    if n_s < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 training samples, got {n_s}")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    let run = |l: usize| -> (Option<Vec<f64>>, usize) {
        let mut failures = 0;
        for attempt in 0..MAX_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(l as u64));
            rng.set_stream(attempt);
            match sample(l, &mut rng) {
                Ok(eps) => return (Some(eps), failures),
                Err(_) => failures += 1,
            }
        }
        (None, failures)
    };
    let results: Vec<(Option<Vec<f64>>, usize)> = pool.install(|| (1..=n_s).into_par_iter().map(run).collect());

    let failed: usize = results.iter().map(|r| r.1).sum();
    let attempted = n_s + failed;
    if results.iter().any(|r| r.0.is_none()) || failed * 10 > attempted {
        return Err(Error::TrainingFailed { failed, attempted });
    }
    let samples: Vec<Vec<f64>> = results.into_iter().map(|r| r.0.unwrap()).collect();
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch("training samples differ in length".into()));
    }
    let (mean, cov) = sample_statistics(&samples);
    Ok((mean, cov, failed))
}

/// Mean and unbiased covariance, accumulated in sample order.
pub fn sample_statistics(samples: &[Vec<f64>]) -> (Vec<f64>, DenseMatrix<f64>) {
    let n = samples.len();
    let dim = samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov: DenseMatrix<f64> = DenseMatrix::zeros(dim, dim);
    let mut d = vec![0.0; dim];
    for s in samples {
        for i in 0..dim {
            d[i] = s[i] - mean[i];
        }
        for i in 0..dim {
            let row = cov.row_mut(i);
            let di = d[i];
            for j in 0..dim {
                row[j] += di * d[j];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    let cov = DenseMatrix::from_fn(dim, dim, |i, j| cov[(i, j)] / denom);
    (mean, cov)
}

/// Learns `ε*` and `Γ_ε` from `n_s` paired accurate/surrogate solves.
pub fn train_error_model(setup: &TrainingSetup, n_s: usize, base_seed: u64, workers: usize) -> Result<ErrorModel> {
    let reference = &setup.reference;
    let intended = reference.intended_electrode_angles();
    let sizing = ElectrodeSizing::Length(ELECTRODE_HALF_LENGTH);
    let surrogate_mesh = Arc::new(deform_mesh(reference, &setup.basis, &[], &intended, sizing)?);
    let surrogate = CemModel::new(Arc::clone(&surrogate_mesh), setup.feed)?;
    let surrogate_sigma = rasterize_conductivity(&surrogate_mesh, setup.table.tissue_means(), None)?;

    let sample = |_l: usize, rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
        let (alpha, angles, z, tissue) = sample_nuisance(&setup.table, setup.std_scale, &setup.basis, &intended, rng)?;
        let mesh = Arc::new(deform_mesh(reference, &setup.basis, &alpha, &angles, sizing)?);
        let sigma = rasterize_conductivity(&mesh, tissue, None)?;
        let accurate = surrogate.rebind(mesh)?.solve_forward(&sigma, &z)?;
        let approx = surrogate.solve_forward(&surrogate_sigma, &z)?;
        Ok(accurate.iter().zip(&approx).map(|(a, b)| a - b).collect())
    };
    let (mean, covariance, failed) = train_with(n_s, base_seed, workers, sample)?;
    Ok(ErrorModel {
        mean,
        covariance,
        info: TrainingInfo {
            samples: n_s,
            failed,
            base_seed,
            std_scale: setup.std_scale,
            refinement: reference.params.refinement,
            surrogate: "mean geometry, intended electrodes, literature tissue conductivities".into(),
            config_digest: String::new(),
        },
    })
}

/// `G = C⁻¹` for the lower Cholesky factor `C` of the total covariance,
/// so `GᵀG = (Γ_ε + Γ_e)⁻¹`, plus the data offset `ε*`.
#[derive(Debug, Clone)]
pub struct Whitener<T> {
    factor: DenseMatrix<T>,
    pub offset: Vec<T>,
}

impl<T: Real> Whitener<T> {
    /// From a total covariance and mean offset. A rank-deficient covariance
    /// is retried once with jitter `1e-12 · trace / dim` on the diagonal.
    pub fn from_covariance(cov: &DenseMatrix<T>, offset: Vec<T>) -> Result<Self> {
        let dim = cov.rows();
        if cov.cols() != dim || offset.len() != dim {
            return Err(Error::DimensionMismatch(format!("covariance {}x{}, offset {}", cov.rows(), cov.cols(), offset.len())));
        }
        let factor = match cov.cholesky() {
            Ok(c) => c,
            Err(_) => {
                let jitter = T::lit(1e-12) * cov.trace() / T::lit(dim as f64);
                cov.add(&DenseMatrix::diagonal(&vec![jitter; dim])).cholesky()?
            }
        };
        Ok(Self { factor, offset })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// Lower Cholesky factor `C` of the total covariance.
    pub fn covariance_factor(&self) -> &DenseMatrix<T> {
        &self.factor
    }

    /// `G v`.
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        self.factor.solve_lower(v)
    }

    /// `G A` column by column.
    pub fn apply_matrix(&self, a: &DenseMatrix<T>) -> DenseMatrix<T> {
        let mut out = DenseMatrix::zeros(a.rows(), a.cols());
        for j in 0..a.cols() {
            out.set_column(j, &self.apply(&a.column(j)));
        }
        out
    }

    /// Dense `G` (for diagnostics and tests).
    pub fn matrix(&self) -> DenseMatrix<T> {
        self.factor.lower_inverse()
    }

    /// `G (data − model − offset)`.
    pub fn whitened_residual(&self, data: &[T], model: &[T]) -> Vec<T> {
        let r: Vec<T> = data.iter().zip(model).zip(&self.offset).map(|((d, m), o)| *d - *m - *o).collect();
        self.apply(&r)
    }
}

/// Whitener for `Γ_ε + Γ_e` (AEM) or `Γ_e` alone.
pub fn build_whitener(error_model: Option<&ErrorModel>, noise: &NoiseModel, dim: usize, use_aem: bool) -> Result<Whitener<f64>> {
    let var = noise.variance();
    if use_aem {
        let em = error_model.ok_or_else(|| Error::InvalidArgument("AEM whitener requested without an error model".into()))?;
        if em.dim() != dim {
            return Err(Error::DimensionMismatch(format!("error model has dimension {}, data {dim}", em.dim())));
        }
        let cov = em.covariance.add(&DenseMatrix::diagonal(&vec![var; dim]));
        Whitener::from_covariance(&cov, em.mean.clone())
    } else {
        if !(var > 0.0) {
            return Err(Error::InvalidArgument("noise-only whitener needs a positive noise level".into()));
        }
        Whitener::from_covariance(&DenseMatrix::diagonal(&vec![var; dim]), vec![0.0; dim])
    }
}
