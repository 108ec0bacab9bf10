//! Principal-component model of three-layer head geometry.
//!
//! A head is described by three star-shaped closed curves (scalp, skull and
//! brain exteriors), each given as a radius function on a uniform angular
//! grid over `[0, 2π)`. Perturbations of a library of heads around its mean
//! are compressed into an orthonormal basis of the discrete `[H¹(S¹)]³`
//! space; random anatomies are drawn from the induced Gaussian on the shape
//! coefficients.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, DenseMatrix};
use crate::scalar::Real;

pub const LAYERS: usize = 3;

/// Layer index. Outermost first: the scalp exterior is the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Layer {
    Scalp = 0,
    Skull = 1,
    Brain = 2,
}

impl Layer {
    pub const ALL: [Layer; LAYERS] = [Layer::Scalp, Layer::Skull, Layer::Brain];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Layer> {
        Self::ALL.get(i).copied()
    }
}

/// Per-layer values on a uniform angular grid.
///
/// Used both for radii (all positive, strictly nested) and for deviations
/// from a mean, which may take any sign.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusProfile<T> {
    pub layers: [Vec<T>; LAYERS],
}

impl<T: Real> RadiusProfile<T> {
    pub fn zeros(grid_size: usize) -> Self {
        Self { layers: std::array::from_fn(|_| vec![T::zero(); grid_size]) }
    }

    pub fn from_layers(layers: [Vec<T>; LAYERS]) -> Result<Self> {
        let g = layers[0].len();
        if layers.iter().any(|l| l.len() != g) {
            return Err(Error::DimensionMismatch("layers have different grid sizes".into()));
        }
        Ok(Self { layers })
    }

    pub fn grid_size(&self) -> usize {
        self.layers[0].len()
    }

    pub fn grid_angle(&self, i: usize) -> T {
        T::lit(2.0 * PI * i as f64 / self.grid_size() as f64)
    }

    pub fn add_scaled(&mut self, s: T, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            crate::scalar::axpy(s, b, a);
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            layers: std::array::from_fn(|l| {
                self.layers[l].iter().zip(&other.layers[l]).map(|(&a, &b)| a - b).collect()
            }),
        }
    }

    /// Radii of all layers at grid index `i`.
    pub fn at(&self, i: usize) -> [T; LAYERS] {
        std::array::from_fn(|l| self.layers[l][i])
    }

    /// Linear interpolation between grid angles; `theta` may be any real.
    pub fn interpolate(&self, theta: T) -> [T; LAYERS] {
        let g = self.grid_size();
        let two_pi = T::lit(2.0 * PI);
        let mut t = theta % two_pi;
        if t < T::zero() {
            t += two_pi;
        }
        let pos = t / two_pi * T::lit(g as f64);
        let i0 = pos.floor().to_usize().unwrap_or(0).min(g - 1);
        let frac = pos - T::lit(i0 as f64);
        let i1 = (i0 + 1) % g;
        std::array::from_fn(|l| {
            let v = &self.layers[l];
            v[i0] + frac * (v[i1] - v[i0])
        })
    }

    /// First grid point where the layers fail `r_scalp > r_skull > r_brain > 0`.
    pub fn nesting_violation(&self) -> Option<usize> {
        (0..self.grid_size()).find(|&i| !is_nested(&self.at(i)))
    }
}

pub(crate) fn is_nested<T: Real>(r: &[T; LAYERS]) -> bool {
    r[0] > r[1] && r[1] > r[2] && r[2] > T::zero()
}

fn nesting_error<T: Real>(theta: T, r: &[T; LAYERS]) -> Error {
    Error::NestingViolation { angle: theta.to_f64_lossy(), radii: r.map(|v| v.to_f64_lossy()) }
}

/// Discrete `[H¹(S¹)]³` inner product: per layer, the trapezoid rule for
/// `∫ v w dθ + ∫ v′ w′ dθ` with periodic central differences for `v′`.
pub fn inner_product<T: Real>(v: &RadiusProfile<T>, w: &RadiusProfile<T>) -> Result<T> {
    let g = v.grid_size();
    if w.grid_size() != g {
        return Err(Error::DimensionMismatch(format!("grid sizes {g} and {}", w.grid_size())));
    }
    if g < 3 {
        return Err(Error::InvalidArgument("grid needs at least 3 points".into()));
    }
    let h = T::lit(2.0 * PI / g as f64);
    let inv_2h = T::one() / (h + h);
    let mut total = T::zero();
    for l in 0..LAYERS {
        let (a, b) = (&v.layers[l], &w.layers[l]);
        let mut s = T::zero();
        for i in 0..g {
            let (ip, im) = ((i + 1) % g, (i + g - 1) % g);
            let da = (a[ip] - a[im]) * inv_2h;
            let db = (b[ip] - b[im]) * inv_2h;
            s += a[i] * b[i] + da * db;
        }
        total += s * h;
    }
    Ok(total)
}

/// Configuration of the synthetic head-library generator.
///
/// Each layer radius is a base value plus a random Fourier series. Orders
/// `0..=max_order` carry the main variation; orders up to `tail_order` carry
/// a quadratically decaying tail so that libraries of up to
/// `3 (2 tail_order + 1)` heads have linearly independent perturbations.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LibraryGenerator {
    /// Base radii (m), outermost first.
    pub base_radii: [f64; LAYERS],
    /// Pointwise standard deviation of each layer radius from the main orders (m).
    pub radial_std: f64,
    /// Correlation of corresponding Fourier coefficients between layers.
    pub layer_correlation: f64,
    pub max_order: usize,
    pub tail_order: usize,
}

impl Default for LibraryGenerator {
    fn default() -> Self {
        Self {
            base_radii: [0.09, 0.082, 0.075],
            radial_std: 0.003,
            layer_correlation: 0.7,
            max_order: 4,
            tail_order: 12,
        }
    }
}

/// Library of head profiles with its mean and perturbations.
#[derive(Debug, Clone)]
pub struct HeadLibrary<T> {
    pub profiles: Vec<RadiusProfile<T>>,
    pub mean: RadiusProfile<T>,
    pub perturbations: Vec<RadiusProfile<T>>,
}

impl<T: Real> HeadLibrary<T> {
    /// Builds mean and perturbations from explicit profiles.
    pub fn from_profiles(profiles: Vec<RadiusProfile<T>>) -> Result<Self> {
        let n = profiles.len();
        if n < 2 {
            return Err(Error::InvalidArgument("library needs at least two heads".into()));
        }
        let g = profiles[0].grid_size();
        if profiles.iter().any(|p| p.grid_size() != g) {
            return Err(Error::DimensionMismatch("library profiles use different grids".into()));
        }
        let mut mean = RadiusProfile::zeros(g);
        let inv_n = T::one() / T::lit(n as f64);
        for p in &profiles {
            mean.add_scaled(inv_n, p);
        }
        let perturbations = profiles.iter().map(|p| p.sub(&mean)).collect();
        Ok(Self { profiles, mean, perturbations })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn grid_size(&self) -> usize {
        self.mean.grid_size()
    }

    /// Gram matrix `R_ij = (ρ_i, ρ_j)`.
    pub fn gram(&self) -> DenseMatrix<T> {
        let n = self.len();
        let mut r = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = inner_product(&self.perturbations[i], &self.perturbations[j]).expect("same grid");
                r[(i, j)] = v;
                r[(j, i)] = v;
            }
        }
        r
    }
}

const MAX_REJECTIONS: usize = 100;

/// Generates a deterministic synthetic library of `n` nested heads.
pub fn build_library<T: Real>(n: usize, grid_size: usize, seed: u64) -> Result<HeadLibrary<T>> {
    build_library_with(&LibraryGenerator::default(), n, grid_size, seed)
}

pub fn build_library_with<T: Real>(
    cfg: &LibraryGenerator,
    n: usize,
    grid_size: usize,
    seed: u64,
) -> Result<HeadLibrary<T>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("library size {n} < 2")));
    }
    if grid_size < 16 {
        return Err(Error::InvalidArgument(format!("grid size {grid_size} < 16")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profiles = Vec::with_capacity(n);
    for _ in 0..n {
        let mut accepted = None;
        for _ in 0..MAX_REJECTIONS {
            let p = random_head::<T>(cfg, grid_size, &mut rng);
            if p.nesting_violation().is_none() {
                accepted = Some(p);
                break;
            }
        }
        match accepted {
            Some(p) => profiles.push(p),
            None => {
                return Err(Error::RetryCapExceeded { what: "nested library head".into(), attempts: MAX_REJECTIONS })
            }
        }
    }
    HeadLibrary::from_profiles(profiles)
}

fn random_head<T: Real>(cfg: &LibraryGenerator, g: usize, rng: &mut impl Rng) -> RadiusProfile<T> {
    let main_terms = 2 * cfg.max_order + 1;
    let coeff_std = cfg.radial_std / (main_terms as f64).sqrt();
    let common = cfg.layer_correlation.sqrt();
    let own = (1.0 - cfg.layer_correlation).sqrt();
    let mut layers: [Vec<f64>; LAYERS] = std::array::from_fn(|l| vec![cfg.base_radii[l]; g]);
    let mut correlated = |std: f64| -> [f64; LAYERS] {
        let c: f64 = StandardNormal.sample(rng);
        std::array::from_fn(|_| {
            let e: f64 = StandardNormal.sample(rng);
            std * (common * c + own * e)
        })
    };
    for k in 0..=cfg.tail_order {
        let std = if k <= cfg.max_order {
            coeff_std
        } else {
            coeff_std * (cfg.max_order.max(1) as f64 / k as f64).powi(2)
        };
        let a = correlated(std);
        let b = if k == 0 { [0.0; LAYERS] } else { correlated(std) };
        for (i, theta) in (0..g).map(|i| (i, 2.0 * PI * i as f64 / g as f64)) {
            let (c, s) = ((k as f64 * theta).cos(), (k as f64 * theta).sin());
            for l in 0..LAYERS {
                layers[l][i] += a[l] * c + b[l] * s;
            }
        }
    }
    RadiusProfile { layers: layers.map(|v| v.into_iter().map(T::lit).collect()) }
}

/// Principal-component shape basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeBasis<T> {
    pub mean: RadiusProfile<T>,
    /// Orthonormal basis functions `ρ̂_k`, one three-layer deviation each.
    pub basis: Vec<RadiusProfile<T>>,
    /// `λ_1 ≥ … ≥ λ_ñ > 0`.
    pub eigenvalues: Vec<T>,
    /// Diagonal of the coefficient covariance, `λ_k / (n − 1)`.
    pub coeff_var: Vec<T>,
    /// Size of the library the basis was computed from.
    pub library_size: usize,
}

/// Relative eigenvalue cut-off below which a direction counts as numerically absent.
pub const RANK_TOL: f64 = 1e-12;

pub fn compute_pca<T: Real>(library: &HeadLibrary<T>, dim: usize) -> Result<ShapeBasis<T>> {
    let n = library.len();
    if dim == 0 || dim > n {
        return Err(Error::InvalidArgument(format!("basis dimension {dim} outside 1..={n}")));
    }
    let gram = library.gram();
    let (values, vectors) = symmetric_eigen(&gram);
    let cutoff = T::lit(RANK_TOL) * values[0];
    if !(values[dim - 1] > cutoff) {
        let rank = values.iter().take_while(|&&v| v > cutoff).count();
        return Err(Error::RankDeficient { requested: dim, rank });
    }
    let g = library.grid_size();
    let mut basis = Vec::with_capacity(dim);
    for k in 0..dim {
        let mut b = RadiusProfile::zeros(g);
        let inv_sqrt = T::one() / values[k].sqrt();
        for (j, rho) in library.perturbations.iter().enumerate() {
            b.add_scaled(vectors[(j, k)] * inv_sqrt, rho);
        }
        basis.push(b);
    }
    let denom = T::lit((n - 1) as f64);
    let eigenvalues: Vec<T> = values[..dim].to_vec();
    let coeff_var = eigenvalues.iter().map(|&l| l / denom).collect();
    Ok(ShapeBasis { mean: library.mean.clone(), basis, eigenvalues, coeff_var, library_size: n })
}

impl<T: Real> ShapeBasis<T> {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn grid_size(&self) -> usize {
        self.mean.grid_size()
    }

    /// `r̄ + Σ α_k ρ̂_k` on the grid. Does not check nesting.
    pub fn profile(&self, alpha: &[T]) -> Result<RadiusProfile<T>> {
        if alpha.len() > self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} shape coefficients for a {}-dimensional basis",
                alpha.len(),
                self.dim()
            )));
        }
        let mut p = self.mean.clone();
        for (&a, b) in alpha.iter().zip(&self.basis) {
            if a != T::zero() {
                p.add_scaled(a, b);
            }
        }
        Ok(p)
    }

    /// Like [`profile`](Self::profile) but rejects geometries whose layers cross.
    pub fn nested_profile(&self, alpha: &[T]) -> Result<RadiusProfile<T>> {
        let p = self.profile(alpha)?;
        if let Some(i) = p.nesting_violation() {
            return Err(nesting_error(p.grid_angle(i), &p.at(i)));
        }
        Ok(p)
    }

    /// Projection coefficients `(ρ, ρ̂_k)` of a deviation onto the basis.
    pub fn project(&self, deviation: &RadiusProfile<T>) -> Result<Vec<T>> {
        self.basis.iter().map(|b| inner_product(deviation, b)).collect()
    }
}

/// Layer radii `S^l(θ; α)` at an arbitrary angle.
pub fn evaluate_shape<T: Real>(basis: &ShapeBasis<T>, alpha: &[T], theta: T) -> Result<[T; LAYERS]> {
    let r = basis.profile(alpha)?.interpolate(theta);
    if !is_nested(&r) {
        return Err(nesting_error(theta, &r));
    }
    Ok(r)
}

/// Draws `α ~ N(0, Γ_α)` with rejection of non-nested anatomies.
pub fn sample_shape_coeffs<T: Real, R: Rng + ?Sized>(basis: &ShapeBasis<T>, rng: &mut R) -> Result<Vec<T>> {
    sample_shape_coeffs_scaled(basis, 1.0, rng)
}

/// As [`sample_shape_coeffs`] with every standard deviation multiplied by `std_scale`.
pub fn sample_shape_coeffs_scaled<T: Real, R: Rng + ?Sized>(
    basis: &ShapeBasis<T>,
    std_scale: f64,
    rng: &mut R,
) -> Result<Vec<T>> {
    for _ in 0..MAX_REJECTIONS {
        let alpha: Vec<T> = basis
            .coeff_var
            .iter()
            .map(|&v| {
                let z: f64 = StandardNormal.sample(rng);
                T::lit(z * std_scale * v.to_f64_lossy().sqrt())
            })
            .collect();
        if basis.profile(&alpha)?.nesting_violation().is_none() {
            return Ok(alpha);
        }
    }
    Err(Error::RetryCapExceeded { what: "nested shape coefficients".into(), attempts: MAX_REJECTIONS })
}
