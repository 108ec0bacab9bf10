//! Up-looking sparse Cholesky factorisation `P A Pᵀ = L Lᵀ`.
//!
//! The symbolic phase (elimination tree, column counts, gather map into the
//! CSR values of `A`) depends only on the sparsity pattern and the ordering,
//! so it is computed once and reused for every matrix with the same pattern.

use std::sync::Arc;

use super::ordering;
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

const NONE: usize = usize::MAX;

#[derive(Debug)]
pub struct SymbolicCholesky {
    n: usize,
    perm: Vec<usize>,
    parent: Vec<usize>,
    /// Column pointers of `L` (diagonal entry first in each column).
    lp: Vec<usize>,
    /// Upper triangle of `P A Pᵀ` by columns: pointers, row indices and the
    /// position of each entry in the CSR value array of `A`.
    cp: Vec<usize>,
    ci: Vec<usize>,
    cmap: Vec<usize>,
    nnz_a: usize,
}

impl SymbolicCholesky {
    /// `perm[new] = old`.
    pub fn analyse<T: Real>(a: &CsrMatrix<T>, perm: Vec<usize>) -> Self {
        let n = a.n_rows();
        assert_eq!(n, a.n_cols());
        assert_eq!(perm.len(), n);
        let iperm = ordering::invert(&perm);

        // Position of every CSR entry in the flat value array.
        let mut row_start = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for i in 0..n {
            row_start.push(acc);
            acc += a.row(i).0.len();
        }
        row_start.push(acc);

        let mut cp = Vec::with_capacity(n + 1);
        let mut ci = Vec::new();
        let mut cmap = Vec::new();
        cp.push(0);
        let mut col: Vec<(usize, usize)> = Vec::new();
        for k in 0..n {
            col.clear();
            let old = perm[k];
            let (cols, _) = a.row(old);
            for (off, &j) in cols.iter().enumerate() {
                let i = iperm[j];
                if i <= k {
                    col.push((i, row_start[old] + off));
                }
            }
            col.sort_unstable();
            for &(i, src) in &col {
                ci.push(i);
                cmap.push(src);
            }
            cp.push(ci.len());
        }

        // Elimination tree.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &i0 in &ci[cp[k]..cp[k + 1]] {
                let mut i = i0;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // Column counts from the row patterns.
        let mut counts = vec![1usize; n];
        let mut mark = vec![NONE; n];
        let mut stack = Vec::new();
        for k in 0..n {
            reach(k, &cp, &ci, &parent, &mut mark, &mut stack);
            for &i in &stack {
                counts[i] += 1;
            }
        }
        let mut lp = Vec::with_capacity(n + 1);
        lp.push(0);
        for k in 0..n {
            lp.push(lp[k] + counts[k]);
        }

        Self { n, perm, parent, lp, cp, ci, cmap, nnz_a: acc }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }
}

/// Pattern of row `k` of `L` (excluding the diagonal) in topological order.
fn reach(k: usize, cp: &[usize], ci: &[usize], parent: &[usize], mark: &mut [usize], out: &mut Vec<usize>) {
    out.clear();
    mark[k] = k;
    let mut path = Vec::new();
    for &i0 in &ci[cp[k]..cp[k + 1]] {
        let mut i = i0;
        if i >= k {
            continue;
        }
        path.clear();
        while mark[i] != k {
            path.push(i);
            mark[i] = k;
            i = parent[i];
            if i == NONE {
                break;
            }
        }
        out.extend_from_slice(&path);
    }
    // Etree parents have larger indices than their children, so ascending
    // order is a valid topological order for the up-looking update.
    out.sort_unstable();
}

/// Numeric Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SparseCholesky<T> {
    symbolic: Arc<SymbolicCholesky>,
    li: Vec<usize>,
    lx: Vec<T>,
}

impl<T: Real> SparseCholesky<T> {
    pub fn new(a: &CsrMatrix<T>, perm: Vec<usize>) -> Result<Self> {
        let symbolic = Arc::new(SymbolicCholesky::analyse(a, perm));
        Self::factor(symbolic, a)
    }

    pub fn factor(symbolic: Arc<SymbolicCholesky>, a: &CsrMatrix<T>) -> Result<Self> {
        let s = &*symbolic;
        let n = s.n;
        if a.n_rows() != n || a.nnz() != s.nnz_a {
            return Err(Error::DimensionMismatch("matrix pattern differs from symbolic analysis".into()));
        }
        let values = flat_values(a);
        let nnz = s.lp[n];
        let mut li = vec![0usize; nnz];
        let mut lx = vec![T::zero(); nnz];
        let mut next: Vec<usize> = s.lp[..n].to_vec();
        let mut x = vec![T::zero(); n];
        let mut mark = vec![NONE; n];
        let mut pattern = Vec::new();
        for k in 0..n {
            reach(k, &s.cp, &s.ci, &s.parent, &mut mark, &mut pattern);
            for p in s.cp[k]..s.cp[k + 1] {
                x[s.ci[p]] = values[s.cmap[p]];
            }
            let mut d = x[k];
            x[k] = T::zero();
            for &i in &pattern {
                let lki = x[i] / lx[s.lp[i]];
                x[i] = T::zero();
                for p in s.lp[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(d > T::zero()) {
                return Err(Error::NotPositiveDefinite { pivot: s.perm[k], value: d.to_f64_lossy() });
            }
            let p = next[k];
            next[k] += 1;
            li[p] = k;
            lx[p] = d.sqrt();
        }
        Ok(Self { symbolic, li, lx })
    }

    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let s = &*self.symbolic;
        let mut y: Vec<T> = s.perm.iter().map(|&old| b[old]).collect();
        self.lower_solve_in_place(&mut y);
        self.lower_transpose_solve_in_place(&mut y);
        let mut x = vec![T::zero(); s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// With `A = Rᵀ R`, `R = Lᵀ P`, applies `R⁻¹ v = Pᵀ L⁻ᵀ v`.
    pub fn apply_inv_upper(&self, v: &[T]) -> Vec<T> {
        let s = &*self.symbolic;
        let mut y = v.to_vec();
        self.lower_transpose_solve_in_place(&mut y);
        let mut x = vec![T::zero(); s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Applies `R⁻ᵀ w = L⁻¹ P w`.
    pub fn apply_inv_upper_transpose(&self, w: &[T]) -> Vec<T> {
        let s = &*self.symbolic;
        let mut y: Vec<T> = s.perm.iter().map(|&old| w[old]).collect();
        self.lower_solve_in_place(&mut y);
        y
    }

    fn lower_solve_in_place(&self, x: &mut [T]) {
        let s = &*self.symbolic;
        for j in 0..s.n {
            let xj = x[j] / self.lx[s.lp[j]];
            x[j] = xj;
            if xj != T::zero() {
                for p in s.lp[j] + 1..s.lp[j + 1] {
                    x[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
    }

    fn lower_transpose_solve_in_place(&self, x: &mut [T]) {
        let s = &*self.symbolic;
        for j in (0..s.n).rev() {
            let mut v = x[j];
            for p in s.lp[j] + 1..s.lp[j + 1] {
                v -= self.lx[p] * x[self.li[p]];
            }
            x[j] = v / self.lx[s.lp[j]];
        }
    }

    /// `log det A`.
    pub fn log_det(&self) -> T {
        let s = &*self.symbolic;
        (0..s.n).map(|j| self.lx[s.lp[j]].ln()).sum::<T>() * T::lit(2.0)
    }
}

fn flat_values<T: Real>(a: &CsrMatrix<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(a.nnz());
    for i in 0..a.n_rows() {
        out.extend_from_slice(a.row(i).1);
    }
    out
}
