use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stroke_eit::shape::{
    build_library, compute_pca, evaluate_shape, inner_product, sample_shape_coeffs, HeadLibrary, RadiusProfile,
};

fn profile(g: usize, seed: u64) -> RadiusProfile<f64> {
    let layers = std::array::from_fn(|l| {
        (0..g)
            .map(|i| {
                let t = 2.0 * std::f64::consts::PI * i as f64 / g as f64;
                ((seed as f64 + 1.0) * t + l as f64).sin() + 0.1 * (seed as f64 * 0.37 + i as f64).cos()
            })
            .collect()
    });
    RadiusProfile::from_layers(layers).unwrap()
}

#[test]
fn large_library_gram_has_rank_n_minus_one() {
    let lib = build_library::<f64>(50, 256, 1).unwrap();
    let gram = lib.gram();
    let m = DMatrix::from_fn(50, 50, |i, j| gram[(i, j)]);
    let eig = m.symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let rank = eig.iter().filter(|v| v.abs() > 1e-12 * max).count();
    assert!(rank == 49 || rank == 50, "rank {rank}");
    for p in &lib.profiles {
        assert!(p.nesting_violation().is_none());
    }
}

#[test]
fn basis_is_orthonormal_and_ordered() {
    let lib = build_library::<f64>(30, 128, 4).unwrap();
    let b = compute_pca(&lib, 12).unwrap();
    for i in 0..b.dim() {
        for j in 0..b.dim() {
            let g = inner_product(&b.basis[i], &b.basis[j]).unwrap();
            assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
    }
    assert!(b.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn first_mode_substitution() {
    let lib = build_library::<f64>(20, 64, 2).unwrap();
    let b = compute_pca(&lib, 3).unwrap();
    let s = b.eigenvalues[0].sqrt();
    let p = b.profile(&[s]).unwrap();
    for i in 0..64 {
        for l in 0..3 {
            let expected = b.mean.layers[l][i] + s * b.basis[0].layers[l][i];
            assert!((p.layers[l][i] - expected).abs() < 1e-14);
        }
    }
    // Small multiples stay nested and agree with the pointwise evaluator.
    let small = 0.05 * (b.eigenvalues[0] / 19.0).sqrt();
    let q = b.profile(&[small]).unwrap();
    for i in 0..64 {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / 64.0;
        let r = evaluate_shape(&b, &[small], theta).unwrap();
        for (rl, layer) in r.iter().zip(&q.layers) {
            assert!((rl - layer[i]).abs() < 1e-14);
        }
    }
}

#[test]
fn two_head_library_is_reproduced() {
    let base = build_library::<f64>(2, 64, 8).unwrap();
    let lib = HeadLibrary::from_profiles(base.profiles.clone()).unwrap();
    let b = compute_pca(&lib, 1).unwrap();
    let alpha = b.project(&lib.perturbations[0]).unwrap();
    let q = b.profile(&alpha).unwrap();
    for l in 0..3 {
        for (x, y) in q.layers[l].iter().zip(&lib.profiles[0].layers[l]) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn sampled_coefficients_follow_the_prior() {
    let lib = build_library::<f64>(50, 128, 1).unwrap();
    let b = compute_pca(&lib, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 10_000;
    let mut sum2 = 0.0;
    for _ in 0..n {
        let a = sample_shape_coeffs(&b, &mut rng).unwrap();
        assert!(b.profile(&a).unwrap().nesting_violation().is_none());
        sum2 += a[0] * a[0];
    }
    let var = sum2 / n as f64;
    let expected = b.eigenvalues[0] / 49.0;
    assert!((var - expected).abs() < 0.1 * expected, "{var} vs {expected}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inner_product_is_symmetric_bilinear_and_positive(s1 in 0u64..50, s2 in 0u64..50, c in -3.0f64..3.0) {
        let g = 32;
        let (v, w) = (profile(g, s1), profile(g, s2));
        let vw = inner_product(&v, &w).unwrap();
        prop_assert!((vw - inner_product(&w, &v).unwrap()).abs() <= 1e-12 * (1.0 + vw.abs()));
        let mut cv = RadiusProfile::zeros(g);
        cv.add_scaled(c, &v);
        let mut sum = cv.clone();
        sum.add_scaled(1.0, &w);
        let lhs = inner_product(&sum, &w).unwrap();
        let rhs = c * vw + inner_product(&w, &w).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        prop_assert!(inner_product(&v, &v).unwrap() > 0.0);
    }

    #[test]
    fn library_is_nested_for_any_seed(seed in 0u64..1000) {
        let lib = build_library::<f64>(4, 64, seed).unwrap();
        for p in &lib.profiles {
            prop_assert!(p.nesting_violation().is_none());
        }
    }
}
