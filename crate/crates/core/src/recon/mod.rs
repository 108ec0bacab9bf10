//! Edge-promoting absolute reconstruction: sequential linearisations of the
//! forward map, lagged-diffusivity steps, priorconditioned LSQR with a
//! discrepancy stop, and least-squares contact-resistance updates.

pub mod lsqr;
pub mod regularizer;
pub mod weight;

use serde::{Deserialize, Serialize};

pub use lsqr::{priorconditioned_lsqr, DenseFactor, HalfSolve, LsqrOptions, LsqrResult, LsqrStop};
pub use regularizer::{build_regularizer, Regularizer, RegularizerMatrix, ShiftOptions};
pub use weight::{build_weight_field, weight_value, WeightField, WeightMode};

use crate::aem::Whitener;
use crate::cem::CemModel;
use crate::error::{Error, Result};
use crate::linalg::{thin_qr, DenseMatrix};
use crate::phantom::{SIGMA_MAX, SIGMA_MIN, Z_MAX, Z_MIN};
use crate::scalar::{norm2, Real};

/// When the outer loop stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Exit once `E ≤ ε`.
    Morozov,
    /// Exit once `E ≤ ε`, or when `E` first increases (returning the
    /// previous iterate).
    FirstIncrease,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Morozov,
    ResidualIncrease,
    MaxIter,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::Morozov => "morozov",
            StopReason::ResidualIncrease => "residual-increase",
            StopReason::MaxIter => "max-iter",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconOptions {
    /// TV smoothing `T`.
    pub smoothing: f64,
    pub weight: WeightMode,
    pub lagged_steps: usize,
    pub sigma_bounds: [f64; 2],
    pub z_bounds: [f64; 2],
    pub max_outer: usize,
    pub max_lsqr: usize,
    pub stop: StopRule,
    /// Discrepancy level; `√(M(M−1))` when absent.
    pub discrepancy: Option<f64>,
    pub shift_tol: f64,
    pub shift_max_iterations: usize,
}

impl Default for ReconOptions {
    fn default() -> Self {
        Self {
            smoothing: 1e-6,
            weight: WeightMode::default(),
            lagged_steps: 5,
            sigma_bounds: [SIGMA_MIN, SIGMA_MAX],
            z_bounds: [Z_MIN, Z_MAX],
            max_outer: 30,
            max_lsqr: 500,
            stop: StopRule::Morozov,
            discrepancy: None,
            shift_tol: 1e-3,
            shift_max_iterations: 500,
        }
    }
}

impl ReconOptions {
    /// Options for data whitened without the approximation-error model.
    pub fn without_aem() -> Self {
        Self { stop: StopRule::FirstIncrease, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.smoothing > 0.0) {
            return bad("TV smoothing must be positive");
        }
        if self.lagged_steps == 0 || self.max_outer == 0 || self.max_lsqr == 0 {
            return bad("iteration counts must be positive");
        }
        for (name, b) in [("σ", self.sigma_bounds), ("z", self.z_bounds)] {
            if !(b[0] > 0.0 && b[0] < b[1] && b[1].is_finite()) {
                return Err(Error::InvalidArgument(format!("invalid {name} bounds {b:?}")));
            }
        }
        if let Some(e) = self.discrepancy {
            if !(e >= 0.0) {
                return bad("discrepancy level must be non-negative");
            }
        }
        Ok(())
    }
}

/// One lagged-diffusivity step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub outer_iter: usize,
    pub inner_iter: usize,
    pub lsqr_iters: usize,
    pub lsqr_capped: bool,
    /// `E` at the state after this step.
    pub residual: f64,
    pub min_kappa: f64,
    pub max_kappa: f64,
}

#[derive(Debug, Clone)]
pub struct Reconstruction<T> {
    pub kappa: Vec<T>,
    pub sigma: Vec<T>,
    pub z: Vec<T>,
    /// `E` at the start and after every outer iteration.
    pub residuals: Vec<T>,
    pub trace: Vec<TraceEntry>,
    pub outer_iterations: usize,
    pub stop: StopReason,
    pub discrepancy: T,
}

impl<T: Real> Reconstruction<T> {
    pub fn final_residual(&self) -> T {
        self.residuals.last().copied().unwrap_or_else(T::nan)
    }
}

/// `E(κ, z) = ‖G(𝒱 − 𝒰₀(σ̃* + κ, z) − offset)‖`.
pub fn residual_norm<T: Real>(data: &[T], model: &CemModel<T>, sigma: &[T], z: &[T], whitener: &Whitener<T>) -> Result<T> {
    let u = model.solve_forward(sigma, z)?;
    Ok(norm2(&whitener.whitened_residual(data, &u)))
}

fn check_dims<T: Real>(data: &[T], model: &CemModel<T>, sigma0: &[T], whitener: &Whitener<T>) -> Result<()> {
    let d = model.data_len();
    if data.len() != d || whitener.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "data length {}, whitener dimension {}, model expects {d}",
            data.len(),
            whitener.dim()
        )));
    }
    if sigma0.len() != model.n_nodes() {
        return Err(Error::DimensionMismatch(format!("σ̃* has {} entries for {} nodes", sigma0.len(), model.n_nodes())));
    }
    Ok(())
}

/// Golden-section minimisation of `E(0, t·1)` over `log t ∈ [log z_min, log z_max]`.
/// The better of the interior minimiser and the two endpoints is returned.
pub fn init_contact_resistances<T: Real>(
    data: &[T],
    model: &CemModel<T>,
    sigma0: &[T],
    whitener: &Whitener<T>,
    z_bounds: [f64; 2],
) -> Result<Vec<T>> {
    check_dims(data, model, sigma0, whitener)?;
    if !(z_bounds[0] > 0.0 && z_bounds[0] < z_bounds[1]) {
        return Err(Error::InvalidArgument(format!("invalid z bounds {z_bounds:?}")));
    }
    let m = model.n_electrodes();
    let eval = |s: f64| -> Result<f64> {
        let z = vec![T::lit(s.exp()); m];
        Ok(residual_norm(data, model, sigma0, &z, whitener)?.to_f64_lossy())
    };
    let (lo, hi) = (z_bounds[0].ln(), z_bounds[1].ln());
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (eval(c)?, eval(d)?);
    while b - a > 1e-6 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let candidates = [(mid, eval(mid)?), (lo, eval(lo)?), (hi, eval(hi)?)];
    let best = candidates.iter().fold(candidates[0], |best, &c| if c.1 < best.1 { c } else { best });
    Ok(vec![T::lit(best.0.exp()); m])
}

/// `v ↦ v − Q_B (Q_Bᵀ v)`, the orthogonal projector onto `ℛ(B₂)^⊥`.
#[derive(Debug, Clone)]
pub struct Projector<T> {
    q: DenseMatrix<T>,
    r: DenseMatrix<T>,
}

impl<T: Real> Projector<T> {
    pub fn new(b2: &DenseMatrix<T>) -> Self {
        let qr = thin_qr(b2);
        Self { q: qr.q, r: qr.r }
    }

    pub fn apply(&self, v: &[T]) -> Vec<T> {
        let c = self.q.tr_matvec(v);
        let qc = self.q.matvec(&c);
        v.iter().zip(&qc).map(|(a, b)| *a - *b).collect()
    }

    pub fn apply_matrix(&self, a: &DenseMatrix<T>) -> DenseMatrix<T> {
        let qta = self.q.tr_matmul(a);
        let qqta = self.q.matmul(&qta);
        DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] - qqta[(i, j)])
    }

    /// `(B₂ᵀB₂)⁻¹ B₂ᵀ v` via the QR factors.
    pub fn least_squares(&self, v: &[T]) -> Vec<T> {
        self.r.solve_upper(&self.q.tr_matvec(v))
    }
}

/// Clamps `κ` so that `σ̃* + κ` lies in `sigma_bounds`, and `z` into `z_bounds`.
pub fn clamp_state<T: Real>(kappa: &mut [T], z: &mut [T], sigma0: &[T], sigma_bounds: [f64; 2], z_bounds: [f64; 2]) {
    let (smin, smax) = (T::lit(sigma_bounds[0]), T::lit(sigma_bounds[1]));
    for (k, &s0) in kappa.iter_mut().zip(sigma0) {
        let s = (s0 + *k).max(smin).min(smax);
        *k = s - s0;
    }
    let (zmin, zmax) = (T::lit(z_bounds[0]), T::lit(z_bounds[1]));
    for v in z {
        *v = v.max(zmin).min(zmax);
    }
}

fn min_max<T: Real>(v: &[T]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        let x = x.to_f64_lossy();
        (lo.min(x), hi.max(x))
    })
}

/// Absolute reconstruction of `κ` and `z` from whitened data on the
/// surrogate model with background conductivity `sigma0`.
pub fn reconstruct<T: Real>(
    data: &[T],
    model: &CemModel<T>,
    sigma0: &[T],
    whitener: &Whitener<T>,
    opts: &ReconOptions,
) -> Result<Reconstruction<T>> {
    opts.validate()?;
    check_dims(data, model, sigma0, whitener)?;
    let m = model.n_electrodes();
    let n = model.n_nodes();
    let eps = T::lit(opts.discrepancy.unwrap_or_else(|| ((m * (m - 1)) as f64).sqrt()));

    let weights = build_weight_field(model.mesh(), opts.weight)?;
    let mut reg = Regularizer::new(model.mesh(), &weights, T::lit(opts.smoothing))?;
    reg.shift = ShiftOptions { rel_tol: opts.shift_tol, max_iterations: opts.shift_max_iterations };
    let lsqr_opts = LsqrOptions { max_iterations: opts.max_lsqr, ..LsqrOptions::default() };

    let sigma_of = |kappa: &[T]| -> Vec<T> { sigma0.iter().zip(kappa).map(|(a, b)| *a + *b).collect() };
    let mut kappa = vec![T::zero(); n];
    let mut z = init_contact_resistances(data, model, sigma0, whitener, opts.z_bounds)?;
    clamp_state(&mut kappa, &mut z, sigma0, opts.sigma_bounds, opts.z_bounds);
    let mut e = residual_norm(data, model, &sigma_of(&kappa), &z, whitener)?;
    let mut residuals = vec![e];
    let mut trace = Vec::new();
    let mut best = (e, kappa.clone(), z.clone());

    let finish = |kappa: Vec<T>, z: Vec<T>, residuals: Vec<T>, trace: Vec<TraceEntry>, outer: usize, stop: StopReason| {
        let sigma = sigma_of(&kappa);
        Reconstruction { kappa, sigma, z, residuals, trace, outer_iterations: outer, stop, discrepancy: eps }
    };
    if e <= eps {
        return Ok(finish(kappa, z, residuals, trace, 0, StopReason::Morozov));
    }

    for outer in 1..=opts.max_outer {
        let lin = model.linearize(&sigma_of(&kappa), &z)?;
        // y = G(𝒱 − offset − 𝒰₀ + J₁κ + J₂z)
        let j1k = lin.j_sigma.matvec(&kappa);
        let j2z = lin.j_z.matvec(&z);
        let rhs: Vec<T> = (0..data.len())
            .map(|i| data[i] - whitener.offset[i] - lin.data[i] + j1k[i] + j2z[i])
            .collect();
        let y = whitener.apply(&rhs);
        let b1 = whitener.apply_matrix(&lin.j_sigma);
        let b2 = whitener.apply_matrix(&lin.j_z);
        let proj = Projector::new(&b2);
        let a = proj.apply_matrix(&b1);
        let b = proj.apply(&y);

        let previous = (kappa.clone(), z.clone());
        for inner in 1..=opts.lagged_steps {
            let h = reg.build(&kappa)?;
            let sol = priorconditioned_lsqr(&a, &b, &h.factor, eps, &lsqr_opts);
            let (capped, iterations) = (sol.cap_reached(), sol.iterations);
            kappa = sol.x;
            let b1k = b1.matvec(&kappa);
            let r: Vec<T> = y.iter().zip(&b1k).map(|(p, q)| *p - *q).collect();
            z = proj.least_squares(&r);
            clamp_state(&mut kappa, &mut z, sigma0, opts.sigma_bounds, opts.z_bounds);
            e = residual_norm(data, model, &sigma_of(&kappa), &z, whitener)?;
            let (min_kappa, max_kappa) = min_max(&kappa);
            trace.push(TraceEntry {
                outer_iter: outer,
                inner_iter: inner,
                lsqr_iters: iterations,
                lsqr_capped: capped,
                residual: e.to_f64_lossy(),
                min_kappa,
                max_kappa,
            });
        }
        let e_prev = *residuals.last().expect("initial residual");
        residuals.push(e);
        if e <= eps {
            return Ok(finish(kappa, z, residuals, trace, outer, StopReason::Morozov));
        }
        if opts.stop == StopRule::FirstIncrease && e > e_prev {
            residuals.pop();
            return Ok(finish(previous.0, previous.1, residuals, trace, outer - 1, StopReason::ResidualIncrease));
        }
        if e < best.0 {
            best = (e, kappa.clone(), z.clone());
        }
    }
    let (e_best, kappa, z) = best;
    if *residuals.last().expect("residual history") != e_best {
        residuals.push(e_best);
    }
    Ok(finish(kappa, z, residuals, trace, opts.max_outer, StopReason::MaxIter))
}
