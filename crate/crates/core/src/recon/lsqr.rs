//! Priorconditioned LSQR with early stopping at a discrepancy level.
//!
//! Runs Paige–Saunders LSQR on `A R⁻¹` where `H = Rᵀ R`, starting from zero,
//! and keeps the iterate in the original variables `κ = R⁻¹ κ̃` throughout.

use crate::linalg::{DenseMatrix, SparseCholesky};
use crate::scalar::{norm2, Real};

/// Access to the inverse of the upper factor `R` of `H = Rᵀ R`.
pub trait HalfSolve<T> {
    fn dim(&self) -> usize;
    /// `R⁻¹ v`.
    fn apply_inv_upper(&self, v: &[T]) -> Vec<T>;
    /// `R⁻ᵀ w`.
    fn apply_inv_upper_transpose(&self, w: &[T]) -> Vec<T>;
}

impl<T: Real> HalfSolve<T> for SparseCholesky<T> {
    fn dim(&self) -> usize {
        SparseCholesky::dim(self)
    }

    fn apply_inv_upper(&self, v: &[T]) -> Vec<T> {
        SparseCholesky::apply_inv_upper(self, v)
    }

    fn apply_inv_upper_transpose(&self, w: &[T]) -> Vec<T> {
        SparseCholesky::apply_inv_upper_transpose(self, w)
    }
}

/// Dense `H = C Cᵀ` with lower `C`, so `R = Cᵀ`.
#[derive(Debug, Clone)]
pub struct DenseFactor<T> {
    lower: DenseMatrix<T>,
}

impl<T: Real> DenseFactor<T> {
    pub fn new(h: &DenseMatrix<T>) -> crate::Result<Self> {
        Ok(Self { lower: h.cholesky()? })
    }
}

impl<T: Real> HalfSolve<T> for DenseFactor<T> {
    fn dim(&self) -> usize {
        self.lower.rows()
    }

    fn apply_inv_upper(&self, v: &[T]) -> Vec<T> {
        self.lower.solve_lower_transpose(v)
    }

    fn apply_inv_upper_transpose(&self, w: &[T]) -> Vec<T> {
        self.lower.solve_lower(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsqrStop {
    /// Residual reached the discrepancy level.
    Discrepancy,
    /// Least-squares solution reached (normal-equation residual negligible
    /// or the Krylov space is exhausted) above the discrepancy level.
    LeastSquares,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct LsqrResult<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub stop: LsqrStop,
    /// `‖A x_k − b‖` for `k = 0..=iterations`.
    pub residuals: Vec<T>,
}

impl<T> LsqrResult<T> {
    pub fn cap_reached(&self) -> bool {
        self.stop == LsqrStop::IterationCap
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqrOptions {
    pub max_iterations: usize,
    /// Relative tolerance on `‖(A R⁻¹)ᵀ r‖ / (‖A R⁻¹‖ ‖r‖)`.
    pub atol: f64,
}

impl Default for LsqrOptions {
    fn default() -> Self {
        Self { max_iterations: 500, atol: 1e-14 }
    }
}

/// Solves `min ‖A κ − b‖` by LSQR on `A R⁻¹`, stopping at the first iterate
/// with residual `≤ eps`.
pub fn priorconditioned_lsqr<T: Real, F: HalfSolve<T> + ?Sized>(
    a: &DenseMatrix<T>,
    b: &[T],
    factor: &F,
    eps: T,
    opts: &LsqrOptions,
) -> LsqrResult<T> {
    let n = a.cols();
    assert_eq!(a.rows(), b.len());
    assert_eq!(factor.dim(), n);
    let mut x = vec![T::zero(); n];

    let mut u = b.to_vec();
    let mut beta = norm2(&u);
    let mut residuals = vec![beta];
    if beta <= eps || beta == T::zero() {
        let stop = if beta <= eps { LsqrStop::Discrepancy } else { LsqrStop::LeastSquares };
        return LsqrResult { x, iterations: 0, stop, residuals };
    }
    u.iter_mut().for_each(|v| *v /= beta);
    let mut v = factor.apply_inv_upper_transpose(&a.tr_matvec(&u));
    let mut alpha = norm2(&v);
    if alpha == T::zero() {
        return LsqrResult { x, iterations: 0, stop: LsqrStop::LeastSquares, residuals };
    }
    v.iter_mut().for_each(|e| *e /= alpha);
    // Search direction in the original variables: w = R⁻¹ w̃.
    let mut rv = factor.apply_inv_upper(&v);
    let mut w = rv.clone();
    let mut phi_bar = beta;
    let mut rho_bar = alpha;
    let mut anorm2 = alpha * alpha;
    let atol = T::lit(opts.atol);

    for k in 1..=opts.max_iterations {
        // Bidiagonalisation step.
        let av = a.matvec(&rv);
        for (ui, avi) in u.iter_mut().zip(&av) {
            *ui = *avi - alpha * *ui;
        }
        beta = norm2(&u);
        if beta > T::zero() {
            u.iter_mut().for_each(|e| *e /= beta);
            let atu = factor.apply_inv_upper_transpose(&a.tr_matvec(&u));
            for (vi, ai) in v.iter_mut().zip(&atu) {
                *vi = *ai - beta * *vi;
            }
            alpha = norm2(&v);
            if alpha > T::zero() {
                v.iter_mut().for_each(|e| *e /= alpha);
            }
        } else {
            alpha = T::zero();
        }
        anorm2 += alpha * alpha + beta * beta;

        // Plane rotation.
        let rho = (rho_bar * rho_bar + beta * beta).sqrt();
        let c = rho_bar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rho_bar = -c * alpha;
        let phi = c * phi_bar;
        phi_bar = s * phi_bar;

        let step = phi / rho;
        let damp = theta / rho;
        for (xi, wi) in x.iter_mut().zip(&w) {
            *xi += step * *wi;
        }
        residuals.push(phi_bar);
        if phi_bar <= eps {
            return LsqrResult { x, iterations: k, stop: LsqrStop::Discrepancy, residuals };
        }
        let normal = phi_bar * alpha * c.abs();
        if alpha == T::zero() || beta == T::zero() || normal <= atol * anorm2.sqrt() * phi_bar {
            return LsqrResult { x, iterations: k, stop: LsqrStop::LeastSquares, residuals };
        }
        rv = factor.apply_inv_upper(&v);
        for (wi, ri) in w.iter_mut().zip(&rv) {
            *wi = *ri - damp * *wi;
        }
    }
    let iterations = opts.max_iterations;
    LsqrResult { x, iterations, stop: LsqrStop::IterationCap, residuals }
}
