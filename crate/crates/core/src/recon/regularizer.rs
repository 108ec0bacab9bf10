//! Lagged-diffusivity TV regularisation matrix `H = H̃(κ) + λ(κ) I`.

use std::sync::Arc;

use super::weight::WeightField;
use crate::error::{Error, Result};
use crate::linalg::{ordering, CsrMatrix, SparseCholesky, SymbolicCholesky, TripletBuilder};
use crate::mesh::Mesh;
use crate::scalar::{dot, norm2, Real};

/// Eigenvalue-estimation controls for the spectral shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftOptions {
    pub rel_tol: f64,
    pub max_iterations: usize,
}

impl Default for ShiftOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-3, max_iterations: 500 }
    }
}

/// Per-mesh data reused for every `κ`: element gradients, weights, the
/// stiffness pattern and its symbolic factorisation.
#[derive(Debug, Clone)]
pub struct Regularizer<T> {
    grads: Vec<[[T; 2]; 3]>,
    area: Vec<T>,
    weights: Vec<T>,
    triangles: Vec<[usize; 3]>,
    pattern: CsrMatrix<T>,
    slots: Vec<[usize; 9]>,
    symbolic: Arc<SymbolicCholesky>,
    smoothing: T,
    start: Vec<T>,
    pub shift: ShiftOptions,
}

/// `H̃`, its shift `λ`, and the factor of `H = H̃ + λ I`.
#[derive(Debug, Clone)]
pub struct RegularizerMatrix<T> {
    pub tilde: CsrMatrix<T>,
    pub lambda: T,
    pub factor: SparseCholesky<T>,
    pub eigen_iterations: usize,
}

impl<T: Real> Regularizer<T> {
    /// `smoothing` is the TV parameter `T` in `r(t) = √(T² + t²)`.
    pub fn new(mesh: &Mesh<T>, weights: &WeightField<T>, smoothing: T) -> Result<Self> {
        if !(smoothing > T::zero()) {
            return Err(Error::InvalidArgument(format!("TV smoothing must be positive, got {smoothing}")));
        }
        let triangles = mesh.triangles().to_vec();
        if weights.values.len() != triangles.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} triangles",
                weights.values.len(),
                triangles.len()
            )));
        }
        let n = mesh.n_nodes();
        let mut grads = Vec::with_capacity(triangles.len());
        let mut area = Vec::with_capacity(triangles.len());
        for (k, t) in triangles.iter().enumerate() {
            let a = mesh.signed_area(k);
            if !(a > T::zero()) {
                return Err(Error::DeformationFailure { triangle: k, area: a.to_f64_lossy() });
            }
            let p = t.map(|v| mesh.nodes[v]);
            let two_a = a + a;
            let mut g = [[T::zero(); 2]; 3];
            for i in 0..3 {
                let (b, c) = (p[(i + 1) % 3], p[(i + 2) % 3]);
                g[i] = [(b[1] - c[1]) / two_a, (c[0] - b[0]) / two_a];
            }
            grads.push(g);
            area.push(a);
        }

        let mut builder = TripletBuilder::with_capacity(n, n, 9 * triangles.len());
        for t in &triangles {
            for &i in t {
                for &j in t {
                    builder.push(i, j, T::zero());
                }
            }
        }
        let pattern = builder.build();
        let slots = triangles
            .iter()
            .map(|t| {
                let mut s = [0usize; 9];
                for a in 0..3 {
                    for b in 0..3 {
                        s[3 * a + b] = pattern.position(t[a], t[b]).expect("entry in pattern");
                    }
                }
                s
            })
            .collect();
        let coords: Vec<[f64; 2]> = mesh.nodes.iter().map(|p| [p[0].to_f64_lossy(), p[1].to_f64_lossy()]).collect();
        let perm = ordering::nested_dissection(&mesh.adjacency(), &coords, &[]);
        let symbolic = Arc::new(SymbolicCholesky::analyse(&pattern, perm));

        // Smooth mean-free start vector for the inverse iteration.
        let mut start: Vec<T> = mesh.nodes.iter().map(|p| p[0] + T::lit(0.3) * p[1]).collect();
        remove_mean(&mut start);

        Ok(Self {
            grads,
            area,
            weights: weights.values.clone(),
            triangles,
            pattern,
            slots,
            symbolic,
            smoothing,
            start,
            shift: ShiftOptions::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.pattern.n_rows()
    }

    /// Exact element gradient of the piecewise-linear `κ`.
    pub fn gradients(&self, kappa: &[T]) -> Vec<[T; 2]> {
        self.triangles
            .iter()
            .zip(&self.grads)
            .map(|(t, g)| {
                let mut out = [T::zero(); 2];
                for i in 0..3 {
                    out[0] += kappa[t[i]] * g[i][0];
                    out[1] += kappa[t[i]] * g[i][1];
                }
                out
            })
            .collect()
    }

    /// Element diffusivity `β = υ / √(T² + |∇κ|²)`.
    pub fn diffusivity(&self, kappa: &[T]) -> Vec<T> {
        let t2 = self.smoothing * self.smoothing;
        self.gradients(kappa)
            .iter()
            .zip(&self.weights)
            .map(|(g, &w)| w / (t2 + g[0] * g[0] + g[1] * g[1]).sqrt())
            .collect()
    }

    /// `H̃(κ)`: stiffness matrix with element coefficient `β`.
    pub fn assemble_tilde(&self, kappa: &[T]) -> Result<CsrMatrix<T>> {
        if kappa.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!("κ has length {}, mesh has {} nodes", kappa.len(), self.dim())));
        }
        let beta = self.diffusivity(kappa);
        let mut h = self.pattern.clone();
        let vals = h.values_mut();
        for (k, g) in self.grads.iter().enumerate() {
            let s = beta[k] * self.area[k];
            for a in 0..3 {
                for b in 0..3 {
                    vals[self.slots[k][3 * a + b]] += s * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
        }
        Ok(h)
    }

    /// Smallest nonzero eigenvalue of `H̃` by inverse iteration on the
    /// complement of the constants. Returns the estimate and the number of
    /// iterations.
    pub fn smallest_nonzero_eigenvalue(&self, tilde: &CsrMatrix<T>) -> Result<(T, usize)> {
        let n = self.dim();
        let scale = tilde.diagonal().into_iter().fold(T::zero(), T::max);
        let delta = T::lit(1e-10) * scale;
        let factor = SparseCholesky::factor(Arc::clone(&self.symbolic), &tilde.with_diagonal_shift(delta))?;
        let tol = T::lit(self.shift.rel_tol);
        let mut v = self.start.clone();
        if n < 2 || norm2(&v) == T::zero() {
            return Err(Error::InvalidArgument("eigenvalue estimate needs a non-constant start vector".into()));
        }
        let mut previous = T::infinity();
        for it in 1..=self.shift.max_iterations {
            let nv = norm2(&v);
            v.iter_mut().for_each(|x| *x /= nv);
            let mut w = factor.solve(&v);
            remove_mean(&mut w);
            let nw = norm2(&w);
            w.iter_mut().for_each(|x| *x /= nw);
            let lambda = dot(&w, &tilde.matvec(&w));
            if (lambda - previous).abs() <= tol * lambda.abs() {
                return Ok((lambda, it));
            }
            previous = lambda;
            v = w;
        }
        Err(Error::NoConvergence(format!("spectral shift after {} inverse iterations", self.shift.max_iterations)))
    }

    /// `H̃(κ)`, `λ(κ)` and the factor of `H̃ + λ I`.
    pub fn build(&self, kappa: &[T]) -> Result<RegularizerMatrix<T>> {
        let tilde = self.assemble_tilde(kappa)?;
        let (lambda, eigen_iterations) = self.smallest_nonzero_eigenvalue(&tilde)?;
        let factor = SparseCholesky::factor(Arc::clone(&self.symbolic), &tilde.with_diagonal_shift(lambda))?;
        Ok(RegularizerMatrix { tilde, lambda, factor, eigen_iterations })
    }
}

/// One-shot construction of `H(κ)` on a mesh.
pub fn build_regularizer<T: Real>(
    mesh: &Mesh<T>,
    kappa: &[T],
    weights: &WeightField<T>,
    smoothing: T,
) -> Result<RegularizerMatrix<T>> {
    Regularizer::new(mesh, weights, smoothing)?.build(kappa)
}

fn remove_mean<T: Real>(v: &mut [T]) {
    let mean = v.iter().copied().sum::<T>() / T::lit(v.len() as f64);
    v.iter_mut().for_each(|x| *x -= mean);
}
