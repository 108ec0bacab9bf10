use std::sync::Arc;

use stroke_eit::cem::CemModel;
use stroke_eit::linalg::symmetric_eigen;
use stroke_eit::mesh::{build_reference_mesh, deform_mesh, deform_to_profile, ElectrodeSizing};
use stroke_eit::shape::{build_library, compute_pca, RadiusProfile};
use stroke_eit::{CemModel64, ShapeBasis64};

const HALF_WIDTH: f64 = 0.0075 / 0.09;

fn basis() -> ShapeBasis64 {
    compute_pca(&build_library::<f64>(10, 128, 3).unwrap(), 4).unwrap()
}

fn mean_model(level: u32, m: usize) -> CemModel64 {
    let b = basis();
    let r = Arc::new(build_reference_mesh::<f64>(level, m, HALF_WIDTH).unwrap());
    let mesh = deform_mesh(&r, &b, &[], &r.intended_electrode_angles(), ElectrodeSizing::Angular).unwrap();
    CemModel::new(Arc::new(mesh), 0).unwrap()
}

fn disk_model(level: u32, m: usize) -> CemModel64 {
    let g = 64;
    let profile = RadiusProfile::from_layers([vec![0.09; g], vec![0.082; g], vec![0.075; g]]).unwrap();
    let r = Arc::new(build_reference_mesh::<f64>(level, m, HALF_WIDTH).unwrap());
    let mesh = deform_to_profile(&r, &profile, &[], &r.intended_electrode_angles(), ElectrodeSizing::Angular).unwrap();
    CemModel::new(Arc::new(mesh), 0).unwrap()
}

fn layered_sigma(f: &CemModel64) -> Vec<f64> {
    f.mesh().node_layer().iter().enumerate().map(|(i, l)| [0.2, 0.06, 0.2][l.index()] * (1.0 + 0.1 * ((i as f64) * 0.7).sin())).collect()
}

fn varied_z(m: usize) -> Vec<f64> {
    (0..m).map(|k| 0.01 * (1.0 + 0.3 * (k as f64).cos())).collect()
}

fn rel_max(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |x, &y| x.max(y.abs()));
    a.iter().zip(b).fold(0.0f64, |x, (p, q)| x.max((p - q).abs())) / scale
}

#[test]
fn scaling_symmetry() {
    let f = mean_model(1, 16);
    let s = layered_sigma(&f);
    let z = varied_z(16);
    let u = f.solve_forward(&s, &z).unwrap();
    for c in [0.1, 3.7] {
        let sc: Vec<f64> = s.iter().map(|v| v * c).collect();
        let zc: Vec<f64> = z.iter().map(|v| v / c).collect();
        let uc: Vec<f64> = f.solve_forward(&sc, &zc).unwrap().iter().map(|v| v * c).collect();
        assert!(rel_max(&uc, &u) < 1e-10, "c = {c}");
    }
}

#[test]
fn resistance_matrix_is_symmetric_and_psd() {
    let f = mean_model(1, 16);
    let r = f.resistance_matrix(&layered_sigma(&f), &varied_z(16)).unwrap();
    assert!(r.asymmetry() <= 1e-10 * r.max_abs());
    let sym = r.add(&r.transpose()).scaled(0.5);
    let (vals, _) = symmetric_eigen(&sym);
    assert!(vals.iter().all(|&v| v >= -1e-12 * vals[0]));
    // R 1 = 0, so exactly one eigenvalue is (numerically) zero.
    assert!(vals[14] > 1e-8 * vals[0]);
}

#[test]
fn resistance_matrix_is_rotation_invariant_on_the_disk() {
    let m = 8;
    let f = disk_model(1, m);
    let r = f.resistance_matrix(&vec![0.2; f.n_nodes()], &[0.01; 8]).unwrap();
    for i in 0..m {
        for j in 0..m {
            let d = (r[(i, j)] - r[((i + 1) % m, (j + 1) % m)]).abs();
            assert!(d <= 1e-9 * r.max_abs(), "({i},{j}) differs by {d:e}");
        }
    }
}

#[test]
fn increasing_conductivity_decreases_diagonal_resistance() {
    let f = mean_model(1, 8);
    let z = varied_z(8);
    let a = f.resistance_matrix(&vec![0.2; f.n_nodes()], &z).unwrap();
    let b = f.resistance_matrix(&vec![0.25; f.n_nodes()], &z).unwrap();
    for i in 0..8 {
        assert!(b[(i, i)].abs() < a[(i, i)].abs());
    }
}

#[test]
fn system_is_positive_definite_on_coarse_mesh() {
    let f = mean_model(0, 4);
    let a = f.assemble_system(&layered_sigma(&f), &varied_z(4)).unwrap().to_dense();
    let (vals, _) = symmetric_eigen(&a);
    assert!(*vals.last().unwrap() > 0.0);
}

#[test]
fn self_convergence_under_refinement() {
    let levels = [0u32, 1, 2];
    let finest = disk_model(4, 16);
    let reference = finest.solve_forward(&vec![0.2; finest.n_nodes()], &[0.01; 16]).unwrap();
    let errors: Vec<f64> = levels
        .iter()
        .map(|&l| {
            let f = disk_model(l, 16);
            let u = f.solve_forward(&vec![0.2; f.n_nodes()], &[0.01; 16]).unwrap();
            rel_max(&u, &reference)
        })
        .collect();
    println!("self-convergence errors {errors:?}");
    for w in errors.windows(2) {
        assert!(w[0] / w[1] >= 2.0, "rate below 1: {errors:?}");
    }
}

fn fd_check(f: &CemModel64, sigma: &[f64], z: &[f64]) -> (f64, f64, f64) {
    let lin = f.linearize(sigma, z).unwrap();
    let rows = lin.data.len();
    let mut err1 = 0.0;
    let mut norm1 = 0.0;
    for j in 0..f.n_nodes() {
        let h = 1e-5 * sigma[j];
        let mut sp = sigma.to_vec();
        sp[j] += h;
        let mut sm = sigma.to_vec();
        sm[j] -= h;
        let (up, um) = (f.solve_forward(&sp, z).unwrap(), f.solve_forward(&sm, z).unwrap());
        for r in 0..rows {
            let fd = (up[r] - um[r]) / (2.0 * h);
            err1 += (fd - lin.j_sigma[(r, j)]).powi(2);
            norm1 += fd * fd;
        }
    }
    let mut err2 = 0.0;
    let mut norm2 = 0.0;
    for e in 0..f.n_electrodes() {
        let h = 1e-5 * z[e];
        let mut zp = z.to_vec();
        zp[e] += h;
        let mut zm = z.to_vec();
        zm[e] -= h;
        let (up, um) = (f.solve_forward(sigma, &zp).unwrap(), f.solve_forward(sigma, &zm).unwrap());
        for r in 0..rows {
            let fd = (up[r] - um[r]) / (2.0 * h);
            err2 += (fd - lin.j_z[(r, e)]).powi(2);
            norm2 += fd * fd;
        }
    }
    let js = lin.j_sigma.matvec(sigma);
    let jz = lin.j_z.matvec(z);
    let euler: Vec<f64> = js.iter().zip(&jz).map(|(a, b)| a - b).collect();
    let neg_u: Vec<f64> = lin.data.iter().map(|v| -v).collect();
    ((err1 / norm1).sqrt(), (err2 / norm2).sqrt(), rel_max(&euler, &neg_u))
}

#[test]
fn jacobians_match_finite_differences() {
    let f = mean_model(1, 16);
    assert!((400..=700).contains(&f.n_nodes()), "{} nodes", f.n_nodes());
    let (e1, e2, euler) = fd_check(&f, &layered_sigma(&f), &varied_z(16));
    println!("J1 {e1:e} J2 {e2:e} Euler {euler:e}");
    assert!(e1 <= 1e-4 && e2 <= 1e-4 && euler <= 1e-8);
}

#[test]
fn interior_nodes_are_less_sensitive_than_boundary_nodes() {
    // Column norms per unit nodal area, so node support size does not matter.
    let f = mean_model(1, 16);
    let j = f.jacobian_sigma(&vec![0.2; f.n_nodes()], &[0.01; 16]).unwrap();
    let area = f.mesh().nodal_areas();
    let density = |c: usize| (0..j.rows()).map(|r| j[(r, c)].powi(2)).sum::<f64>().sqrt() / area[c];
    let centre = density(f.n_nodes() - 1);
    for &b in f.mesh().boundary_nodes() {
        assert!(centre < density(b));
    }
}

#[test]
fn z_jacobian_column_shrinks_with_large_contact_resistance() {
    let f = mean_model(0, 8);
    let sigma = vec![0.2; f.n_nodes()];
    let mut last = f64::INFINITY;
    for zk in [0.01, 0.1, 1.0, 10.0] {
        let mut z = vec![0.01; 8];
        z[3] = zk;
        let j = f.jacobian_z(&sigma, &z).unwrap();
        let norm = (0..j.rows()).map(|r| j[(r, 3)].powi(2)).sum::<f64>().sqrt();
        assert!(norm < last, "z = {zk}: {norm} !< {last}");
        last = norm;
    }
}
