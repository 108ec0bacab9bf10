//! Complete electrode model: P1 finite elements, forward map and Jacobians.
//!
//! Unknowns are the nodal potential `u` and coefficients `β` of the
//! electrode potentials in the basis `e_1 − e_{k+1}`, `k = 1..M−1`, so
//! `U = N β` is mean-free by construction and the system is SPD.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::ordering;
use crate::linalg::{CsrMatrix, DenseMatrix, SparseCholesky, SymbolicCholesky, TripletBuilder};
use crate::mesh::Mesh;
use crate::scalar::Real;

const GAUSS_2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Current patterns `e_p − e_j`, `j ≠ p`, in increasing `j`.
pub fn current_patterns<T: Real>(electrodes: usize, feed: usize) -> Vec<Vec<T>> {
    (0..electrodes)
        .filter(|&j| j != feed)
        .map(|j| {
            let mut i = vec![T::zero(); electrodes];
            i[feed] = T::one();
            i[j] = -T::one();
            i
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct EdgeData<T> {
    a: usize,
    b: usize,
    len: T,
}

/// Element geometry needed for assembly.
#[derive(Debug, Clone)]
struct Discretization<T> {
    mesh: Arc<Mesh<T>>,
    n: usize,
    m: usize,
    area: Vec<T>,
    grads: Vec<[[T; 2]; 3]>,
    edges: Vec<Vec<EdgeData<T>>>,
    electrode_len: Vec<T>,
}

/// Forward solver bound to one mesh and feed electrode. The sparsity
/// pattern and its symbolic factorisation are shared by every `(σ, z)`.
#[derive(Debug, Clone)]
pub struct CemModel<T> {
    disc: Discretization<T>,
    feed: usize,
    pattern: CsrMatrix<T>,
    slots: Vec<usize>,
    symbolic: Arc<SymbolicCholesky>,
}

impl<T: Real> Discretization<T> {
    fn new(mesh: Arc<Mesh<T>>) -> Result<Self> {
        let m = mesh.n_electrodes();
        let n = mesh.n_nodes();
        let mut area = Vec::with_capacity(mesh.triangles().len());
        let mut grads = Vec::with_capacity(mesh.triangles().len());
        for (k, t) in mesh.triangles().iter().enumerate() {
            let a = mesh.signed_area(k);
            if !(a > T::zero()) {
                return Err(Error::DeformationFailure { triangle: k, area: a.to_f64_lossy() });
            }
            let p = t.map(|v| mesh.nodes[v]);
            let inv = T::one() / (a + a);
            let mut g = [[T::zero(); 2]; 3];
            for i in 0..3 {
                let (q, r) = (p[(i + 1) % 3], p[(i + 2) % 3]);
                g[i] = [(q[1] - r[1]) * inv, (r[0] - q[0]) * inv];
            }
            area.push(a);
            grads.push(g);
        }
        let edges: Vec<Vec<EdgeData<T>>> = (0..m)
            .map(|e| {
                mesh.electrode_edges(e)
                    .into_iter()
                    .map(|[a, b]| {
                        let (pa, pb) = (mesh.nodes[a], mesh.nodes[b]);
                        EdgeData { a, b, len: ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt() }
                    })
                    .collect()
            })
            .collect();
        let electrode_len = edges.iter().map(|es| es.iter().map(|e| e.len).sum()).collect();

        Ok(Self { mesh, n, m, area, grads, edges, electrode_len })
    }

    /// Emits every system entry in a fixed order.
    fn visit(&self, sigma: &[T], z: &[T], mut f: impl FnMut(usize, usize, T)) {
        let n = self.n;
        let third = T::lit(1.0 / 3.0);
        for (k, t) in self.mesh.triangles().iter().enumerate() {
            let s = (sigma[t[0]] + sigma[t[1]] + sigma[t[2]]) * third * self.area[k];
            let g = &self.grads[k];
            for i in 0..3 {
                for j in 0..3 {
                    f(t[i], t[j], s * (g[i][0] * g[j][0] + g[i][1] * g[j][1]));
                }
            }
        }
        let half = T::lit(0.5);
        let sixth = T::lit(1.0 / 6.0);
        for (e, edges) in self.edges.iter().enumerate() {
            let inv_z = T::one() / z[e];
            for ed in edges {
                let diag = ed.len * third * inv_z;
                let off = ed.len * sixth * inv_z;
                f(ed.a, ed.a, diag);
                f(ed.b, ed.b, diag);
                f(ed.a, ed.b, off);
                f(ed.b, ed.a, off);
                let load = ed.len * half * inv_z;
                if e == 0 {
                    for k in 0..self.m - 1 {
                        for v in [ed.a, ed.b] {
                            f(v, n + k, -load);
                            f(n + k, v, -load);
                        }
                    }
                } else {
                    for v in [ed.a, ed.b] {
                        f(v, n + e - 1, load);
                        f(n + e - 1, v, load);
                    }
                }
            }
        }
        let d0 = self.electrode_len[0] / z[0];
        for k in 0..self.m - 1 {
            for l in 0..self.m - 1 {
                let v = if k == l { d0 + self.electrode_len[k + 1] / z[k + 1] } else { d0 };
                f(n + k, n + l, v);
            }
        }
    }
}

/// Forward data together with its derivatives at one `(σ, z)`.
#[derive(Debug, Clone)]
pub struct Linearization<T> {
    pub data: Vec<T>,
    /// `∂data/∂σ`, `M(M−1) × N`.
    pub j_sigma: DenseMatrix<T>,
    /// `∂data/∂z`, `M(M−1) × M`.
    pub j_z: DenseMatrix<T>,
}

impl<T: Real> CemModel<T> {
    /// `feed` is the zero-based index of the common current electrode.
    pub fn new(mesh: Arc<Mesh<T>>, feed: usize) -> Result<Self> {
        let m = mesh.n_electrodes();
        if feed >= m {
            return Err(Error::InvalidArgument(format!("feed electrode {feed} out of range for {m} electrodes")));
        }
        let disc = Discretization::new(mesh)?;
        let (n, dim) = (disc.n, disc.n + m - 1);
        let mut builder = TripletBuilder::new(dim, dim);
        let ones_s = vec![T::one(); n];
        let ones_z = vec![T::one(); m];
        disc.visit(&ones_s, &ones_z, |i, j, _| builder.push(i, j, T::zero()));
        let pattern = builder.build();
        let mut slots = Vec::new();
        disc.visit(&ones_s, &ones_z, |i, j, _| slots.push(pattern.position(i, j).expect("entry in pattern")));

        let mut adjacency = disc.mesh.adjacency();
        adjacency.extend((0..m - 1).map(|_| Vec::new()));
        let mut coords: Vec<[f64; 2]> =
            disc.mesh.nodes.iter().map(|p| [p[0].to_f64_lossy(), p[1].to_f64_lossy()]).collect();
        coords.extend((0..m - 1).map(|_| [0.0, 0.0]));
        let last: Vec<usize> = (n..dim).collect();
        let perm = ordering::nested_dissection(&adjacency, &coords, &last);
        let symbolic = Arc::new(SymbolicCholesky::analyse(&pattern, perm));
        Ok(Self { disc, feed, pattern, slots, symbolic })
    }

    /// Model on another mesh with the same reference topology, reusing the
    /// sparsity pattern and symbolic factorisation.
    pub fn rebind(&self, mesh: Arc<Mesh<T>>) -> Result<Self> {
        if !Arc::ptr_eq(&mesh.reference, &self.disc.mesh.reference) && mesh.triangles() != self.disc.mesh.triangles() {
            return Err(Error::InvalidArgument("mesh topology differs from the model's".into()));
        }
        Ok(Self {
            disc: Discretization::new(mesh)?,
            feed: self.feed,
            pattern: self.pattern.clone(),
            slots: self.slots.clone(),
            symbolic: Arc::clone(&self.symbolic),
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh<T>> {
        &self.disc.mesh
    }

    pub fn n_nodes(&self) -> usize {
        self.disc.n
    }

    pub fn n_electrodes(&self) -> usize {
        self.disc.m
    }

    pub fn feed(&self) -> usize {
        self.feed
    }

    /// Length `M(M−1)` of the stacked data vector.
    pub fn data_len(&self) -> usize {
        self.disc.m * (self.disc.m - 1)
    }

    pub fn electrode_length(&self, e: usize) -> T {
        self.disc.electrode_len[e]
    }

    fn check_inputs(&self, sigma: &[T], z: &[T]) -> Result<()> {
        if sigma.len() != self.disc.n || z.len() != self.disc.m {
            return Err(Error::DimensionMismatch(format!(
                "σ has {} entries (mesh {}), z has {} (electrodes {})",
                sigma.len(),
                self.disc.n,
                z.len(),
                self.disc.m
            )));
        }
        if let Some(j) = sigma.iter().position(|s| !(*s > T::zero()) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("σ[{j}] = {} is not positive", sigma[j])));
        }
        if let Some(j) = z.iter().position(|s| !(*s > T::zero()) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("z[{j}] = {} is not positive", z[j])));
        }
        Ok(())
    }

    /// The symmetric system matrix for `(u, β)`.
    pub fn assemble_system(&self, sigma: &[T], z: &[T]) -> Result<CsrMatrix<T>> {
        self.check_inputs(sigma, z)?;
        let mut a = self.pattern.clone();
        let values = a.values_mut();
        values.iter_mut().for_each(|v| *v = T::zero());
        let mut k = 0;
        self.disc.visit(sigma, z, |_, _, v| {
            values[self.slots[k]] += v;
            k += 1;
        });
        Ok(a)
    }

    pub fn factor(&self, sigma: &[T], z: &[T]) -> Result<SparseCholesky<T>> {
        let a = self.assemble_system(sigma, z)?;
        SparseCholesky::factor(Arc::clone(&self.symbolic), &a).map_err(|e| match e {
            Error::NotPositiveDefinite { pivot, value } => Error::SingularSystem(format!(
                "pivot {value:e} at unknown {pivot} of {} (nodes {}, electrodes {})",
                self.disc.n + self.disc.m - 1,
                self.disc.n,
                self.disc.m
            )),
            other => other,
        })
    }

    fn rhs(&self, current: &[T]) -> Vec<T> {
        let mut b = vec![T::zero(); self.disc.n + self.disc.m - 1];
        for k in 0..self.disc.m - 1 {
            b[self.disc.n + k] = current[0] - current[k + 1];
        }
        b
    }

    /// Electrode potentials `U = N β` of a solution vector.
    fn electrode_potentials(&self, x: &[T]) -> Vec<T> {
        let beta = &x[self.disc.n..];
        let mut u = Vec::with_capacity(self.disc.m);
        u.push(beta.iter().copied().sum());
        u.extend(beta.iter().map(|&b| -b));
        u
    }

    fn solve_states(&self, chol: &SparseCholesky<T>, currents: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        currents
            .iter()
            .map(|c| {
                if c.len() != self.disc.m {
                    return Err(Error::DimensionMismatch(format!("current pattern of length {} for {} electrodes", c.len(), self.disc.m)));
                }
                Ok(chol.solve(&self.rhs(c)))
            })
            .collect()
    }

    /// Electrode potentials for arbitrary current vectors (one factorisation).
    pub fn solve_currents(&self, sigma: &[T], z: &[T], currents: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        let chol = self.factor(sigma, z)?;
        Ok(self.solve_states(&chol, currents)?.iter().map(|x| self.electrode_potentials(x)).collect())
    }

    /// Stacked potentials for the `M−1` patterns `e_p − e_j`.
    pub fn solve_forward(&self, sigma: &[T], z: &[T]) -> Result<Vec<T>> {
        let patterns = current_patterns(self.disc.m, self.feed);
        Ok(self.solve_currents(sigma, z, &patterns)?.concat())
    }

    /// `R` with `U = R I` for mean-free `I`, and `R 1 = 0`.
    pub fn resistance_matrix(&self, sigma: &[T], z: &[T]) -> Result<DenseMatrix<T>> {
        let m = self.disc.m;
        let patterns: Vec<Vec<T>> = (1..m)
            .map(|j| {
                let mut i = vec![T::zero(); m];
                i[0] = T::one();
                i[j] = -T::one();
                i
            })
            .collect();
        let cols = self.solve_currents(sigma, z, &patterns)?;
        // R = Y (NᵀN)⁻¹ Nᵀ with (NᵀN)⁻¹ = I − J/M.
        let inv_m = T::one() / T::lit(m as f64);
        let y = DenseMatrix::from_fn(m, m - 1, |r, k| cols[k][r]);
        let g = DenseMatrix::from_fn(m - 1, m - 1, |k, l| if k == l { T::one() - inv_m } else { -inv_m });
        let nt = DenseMatrix::from_fn(m - 1, m, |k, e| {
            if e == 0 {
                T::one()
            } else if e == k + 1 {
                -T::one()
            } else {
                T::zero()
            }
        });
        Ok(y.matmul(&g).matmul(&nt))
    }

    /// Forward data with both Jacobians, from one factorisation and the
    /// adjoint solutions `w_m = A⁻¹ ℓ_m`.
    pub fn linearize(&self, sigma: &[T], z: &[T]) -> Result<Linearization<T>> {
        let (n, m) = (self.disc.n, self.disc.m);
        let chol = self.factor(sigma, z)?;
        let states = self.solve_states(&chol, &current_patterns(m, self.feed))?;
        let adjoints: Vec<Vec<T>> = (0..m)
            .map(|e| {
                let mut l = vec![T::zero(); n + m - 1];
                if e == 0 {
                    l[n..].iter_mut().for_each(|v| *v = T::one());
                } else {
                    l[n + e - 1] = -T::one();
                }
                chol.solve(&l)
            })
            .collect();
        let u_el: Vec<Vec<T>> = states.iter().map(|x| self.electrode_potentials(x)).collect();
        let w_el: Vec<Vec<T>> = adjoints.iter().map(|x| self.electrode_potentials(x)).collect();
        let data: Vec<T> = u_el.concat();
        let rows = data.len();

        let mut j_sigma = DenseMatrix::zeros(rows, n);
        let third = T::lit(1.0 / 3.0);
        let grad = |x: &[T], t: &[usize; 3], g: &[[T; 2]; 3]| {
            let mut out = [T::zero(); 2];
            for i in 0..3 {
                out[0] += x[t[i]] * g[i][0];
                out[1] += x[t[i]] * g[i][1];
            }
            out
        };
        let mut gu = vec![[T::zero(); 2]; m - 1];
        let mut gw = vec![[T::zero(); 2]; m];
        for (k, t) in self.disc.mesh.triangles().iter().enumerate() {
            let g = &self.disc.grads[k];
            for (d, x) in states.iter().enumerate() {
                gu[d] = grad(x, t, g);
            }
            for (e, x) in adjoints.iter().enumerate() {
                gw[e] = grad(x, t, g);
            }
            let w = -self.disc.area[k] * third;
            for d in 0..m - 1 {
                for e in 0..m {
                    let v = w * (gu[d][0] * gw[e][0] + gu[d][1] * gw[e][1]);
                    let row = j_sigma.row_mut(d * m + e);
                    for &node in t {
                        row[node] += v;
                    }
                }
            }
        }

        let mut j_z = DenseMatrix::zeros(rows, m);
        for (c, edges) in self.disc.edges.iter().enumerate() {
            let s = T::one() / (z[c] * z[c]);
            for d in 0..m - 1 {
                for e in 0..m {
                    let mut acc = T::zero();
                    for ed in edges {
                        for &q in &GAUSS_2 {
                            let q = T::lit(q);
                            let at = |x: &[T]| x[ed.a] * (T::one() - q) + x[ed.b] * q;
                            acc += ed.len * T::lit(0.5) * (at(&states[d]) - u_el[d][c]) * (at(&adjoints[e]) - w_el[e][c]);
                        }
                    }
                    j_z[(d * m + e, c)] = acc * s;
                }
            }
        }
        Ok(Linearization { data, j_sigma, j_z })
    }

    pub fn jacobian_sigma(&self, sigma: &[T], z: &[T]) -> Result<DenseMatrix<T>> {
        Ok(self.linearize(sigma, z)?.j_sigma)
    }

    pub fn jacobian_z(&self, sigma: &[T], z: &[T]) -> Result<DenseMatrix<T>> {
        Ok(self.linearize(sigma, z)?.j_z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_reference_mesh, deform_mesh, ElectrodeSizing};
    use crate::shape::{build_library, compute_pca};

    fn model(level: u32, m: usize) -> CemModel<f64> {
        let b = compute_pca(&build_library::<f64>(8, 64, 2).unwrap(), 3).unwrap();
        let r = Arc::new(build_reference_mesh::<f64>(level, m, 0.0833).unwrap());
        let mesh = deform_mesh(&r, &b, &[], &r.intended_electrode_angles(), ElectrodeSizing::Angular).unwrap();
        CemModel::new(Arc::new(mesh), 0).unwrap()
    }

    #[test]
    fn zero_current_gives_zero_potential() {
        let f = model(0, 8);
        let u = f.solve_currents(&vec![0.2; f.n_nodes()], &[0.01; 8], &[vec![0.0; 8]]).unwrap();
        assert!(u[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn system_is_symmetric() {
        let f = model(0, 8);
        let sigma: Vec<f64> = (0..f.n_nodes()).map(|i| 0.1 + 0.01 * (i % 7) as f64).collect();
        let a = f.assemble_system(&sigma, &[0.01, 0.02, 0.01, 0.03, 0.01, 0.01, 0.02, 0.01]).unwrap();
        assert!(a.max_asymmetry() <= 1e-12 * a.diagonal().iter().fold(0.0f64, |x, &y| x.max(y)));
    }

    #[test]
    fn doubling_z_halves_electrode_block() {
        let f = model(0, 4);
        let sigma = vec![0.2; f.n_nodes()];
        let a = f.assemble_system(&sigma, &[0.01; 4]).unwrap();
        let b = f.assemble_system(&sigma, &[0.01, 0.01, 0.02, 0.01]).unwrap();
        let n = f.n_nodes();
        // Coupling between electrode 2 (β slot 1) and its nodes.
        let node = f.mesh().electrode_edges(2)[0][0];
        assert!((b.get(node, n + 1) - 0.5 * a.get(node, n + 1)).abs() < 1e-15);
    }

    #[test]
    fn potentials_are_mean_free() {
        let f = model(1, 16);
        let u = f.solve_forward(&vec![0.2; f.n_nodes()], &[0.01; 16]).unwrap();
        let scale = u.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for block in u.chunks(16) {
            assert!(block.iter().sum::<f64>().abs() <= 1e-10 * scale);
        }
    }
}
