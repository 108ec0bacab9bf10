use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use stroke_eit::mesh::{boundary_distance, build_reference_mesh, deform_mesh, ElectrodeSizing};
use stroke_eit::phantom::{ELECTRODE_HALF_LENGTH, ELECTRODE_HALF_WIDTH};
use stroke_eit::shape::{build_library, compute_pca};

#[test]
fn node_counts_are_frozen() {
    let counts: Vec<usize> =
        (0..=3).map(|l| build_reference_mesh::<f64>(l, 16, ELECTRODE_HALF_WIDTH).unwrap().n_nodes()).collect();
    println!("{counts:?}");
    assert_eq!(counts, [209, 529, 1585, 5345]);
    assert!((3000..=12000).contains(&counts[3]));
    let again = build_reference_mesh::<f64>(3, 16, ELECTRODE_HALF_WIDTH).unwrap();
    assert_eq!(again.n_nodes(), counts[3]);
}

#[test]
fn two_electrode_disk_has_disk_topology() {
    let r = build_reference_mesh::<f64>(0, 2, 0.3).unwrap();
    let (v, e, f) = (r.n_nodes() as i64, r.n_edges() as i64, r.triangles.len() as i64);
    assert_eq!(v - e + f, 1);
}

#[test]
fn extreme_geometries_stay_well_shaped() {
    let basis = compute_pca(&build_library::<f64>(50, 128, 1).unwrap(), 10).unwrap();
    let r = Arc::new(build_reference_mesh::<f64>(2, 16, ELECTRODE_HALF_WIDTH).unwrap());
    let intended = r.intended_electrode_angles();
    let mut worst = f64::INFINITY;
    let mut tried = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..basis.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Coefficient vector at Mahalanobis radius 3.
        let alpha: Vec<f64> = w.iter().zip(&basis.coeff_var).map(|(x, v)| 3.0 * x / norm * v.sqrt()).collect();
        let angles: Vec<f64> = intended
            .iter()
            .map(|a| {
                let s: f64 = StandardNormal.sample(&mut rng);
                a + 3.0 * 0.015 * s.signum()
            })
            .collect();
        let Ok(mesh) = deform_mesh(&r, &basis, &alpha, &angles, ElectrodeSizing::Length(ELECTRODE_HALF_LENGTH)) else {
            continue;
        };
        tried += 1;
        assert!(mesh.min_signed_area() > 0.0);
        worst = worst.min(mesh.min_quality());
    }
    println!("{tried} meshes, worst quality {worst:.3}");
    assert!(tried >= 90 && worst > 0.1);
}

#[test]
fn deformed_meshes_share_topology_and_satisfy_eikonal_bound() {
    let basis = compute_pca(&build_library::<f64>(20, 128, 2).unwrap(), 5).unwrap();
    let r = Arc::new(build_reference_mesh::<f64>(1, 16, ELECTRODE_HALF_WIDTH).unwrap());
    let intended = r.intended_electrode_angles();
    let a = deform_mesh(&r, &basis, &[], &intended, ElectrodeSizing::Length(ELECTRODE_HALF_LENGTH)).unwrap();
    let alpha: Vec<f64> = basis.coeff_var.iter().map(|v| 1.5 * v.sqrt()).collect();
    let shifted: Vec<f64> = intended.iter().map(|x| x + 0.02).collect();
    let b = deform_mesh(&r, &basis, &alpha, &shifted, ElectrodeSizing::Length(ELECTRODE_HALF_LENGTH)).unwrap();
    assert_eq!(a.triangles(), b.triangles());
    assert_eq!(a.triangle_layer(), b.triangle_layer());
    assert_eq!(a.boundary_nodes(), b.boundary_nodes());
    assert_ne!(a.nodes, b.nodes);
    for mesh in [&a, &b] {
        let d = boundary_distance(mesh);
        for (i, nbrs) in mesh.adjacency().iter().enumerate() {
            for &j in nbrs {
                let len = (mesh.nodes[i][0] - mesh.nodes[j][0]).hypot(mesh.nodes[i][1] - mesh.nodes[j][1]);
                assert!((d[i] - d[j]).abs() <= len * (1.0 + 1e-12));
            }
        }
        for m in 0..16 {
            assert!((mesh.electrode_length(m) - 2.0 * ELECTRODE_HALF_LENGTH).abs() < 1e-9);
        }
    }
}
