use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stroke_eit::aem::{train_error_model, train_with, TrainingSetup, Whitener};
use stroke_eit::linalg::DenseMatrix;
use stroke_eit::mesh::build_reference_mesh;
use stroke_eit::phantom::{Table1, ELECTRODE_HALF_WIDTH};
use stroke_eit::shape::{build_library, compute_pca};

fn setup(std_scale: f64) -> TrainingSetup {
    TrainingSetup {
        basis: Arc::new(compute_pca(&build_library::<f64>(30, 128, 1).unwrap(), 8).unwrap()),
        reference: Arc::new(build_reference_mesh::<f64>(1, 16, ELECTRODE_HALF_WIDTH).unwrap()),
        table: Table1::default(),
        std_scale,
        feed: 0,
    }
}

#[test]
fn error_trace_grows_with_prior_spread() {
    let t1 = train_error_model(&setup(0.5), 60, 1, 1).unwrap().covariance.trace();
    let t2 = train_error_model(&setup(1.0), 60, 1, 1).unwrap().covariance.trace();
    assert!(t2 > t1, "{t1:e} vs {t2:e}");
}

#[test]
fn statistics_do_not_depend_on_workers() {
    let s = setup(1.0);
    let a = train_error_model(&s, 24, 5, 1).unwrap();
    let b = train_error_model(&s, 24, 5, 3).unwrap();
    assert_eq!(a, b);
    // A synthetic sampler whose cost varies with the index finishes out of order.
    let f = |l: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        std::thread::sleep(std::time::Duration::from_micros(((37 * l) % 11) as u64 * 100));
        Ok((0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
    };
    let x = train_with(40, 9, 1, f).unwrap();
    let y = train_with(40, 9, 4, f).unwrap();
    assert_eq!(x.0, y.0);
    assert_eq!(x.1, y.1);
}

#[test]
fn whitener_inverts_random_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
    let cov = &w * w.transpose() + DMatrix::identity(6, 6) * 0.1;
    let dense = DenseMatrix::from_fn(6, 6, |i, j| cov[(i, j)]);
    let wh = Whitener::from_covariance(&dense, vec![0.0; 6]).unwrap();
    let g = wh.matrix();
    let g = DMatrix::from_fn(6, 6, |i, j| g[(i, j)]);
    let id = &g * &cov * g.transpose();
    assert!((id - DMatrix::identity(6, 6)).abs().max() < 1e-10);
}
