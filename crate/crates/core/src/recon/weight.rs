//! Spatial weight of the edge-promoting prior: large in the outermost
//! layer, close to one in the interior.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::scalar::Real;

/// Shape of the weight `υ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightMode {
    /// `υ(x) = 2 / (1 + tanh(c (dist(x, ∂Ω) − d)))`, `c` in 1/m and `d` in m.
    Boundary { c: f64, d: f64 },
    /// `υ ≡ 1`.
    Uniform,
}

impl Default for WeightMode {
    fn default() -> Self {
        WeightMode::Boundary { c: 300.0, d: 0.01 }
    }
}

/// `υ` at distance `dist` from the boundary.
pub fn weight_value<T: Real>(dist: T, c: T, d: T) -> T {
    T::lit(2.0) / (T::one() + (c * (dist - d)).tanh())
}

/// One value of `υ` per triangle, evaluated at the centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField<T> {
    pub values: Vec<T>,
    pub mode: WeightMode,
}

pub fn build_weight_field<T: Real>(mesh: &Mesh<T>, mode: WeightMode) -> Result<WeightField<T>> {
    let n = mesh.triangles().len();
    let values = match mode {
        WeightMode::Uniform => vec![T::one(); n],
        WeightMode::Boundary { c, d } => {
            if !(c > 0.0 && d > 0.0) {
                return Err(Error::InvalidArgument(format!("weight parameters must be positive (c = {c}, d = {d})")));
            }
            let centroids: Vec<[T; 2]> = (0..n).map(|t| mesh.centroid(t)).collect();
            let (c, d) = (T::lit(c), T::lit(d));
            mesh.distance_to_boundary(&centroids).into_iter().map(|r| weight_value(r, c, d)).collect()
        }
    };
    Ok(WeightField { values, mode })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(weight_value(0.01, 300.0, 0.01), 2.0);
        let at_boundary = weight_value(0.0, 300.0, 0.01);
        let expected = 2.0 / (1.0 + (-3.0f64).tanh());
        assert!((at_boundary - expected).abs() <= 1e-12 * expected);
        assert!((at_boundary - 404.4).abs() < 0.1);
        let deep = weight_value(0.01 + 3.0 / 300.0, 300.0, 0.01);
        assert!((1.0..1.01).contains(&deep));
    }
}
