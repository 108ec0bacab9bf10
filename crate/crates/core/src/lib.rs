//! Absolute EIT stroke imaging on layered 2D head phantoms.
//!
//! Numerical kernels are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the pipeline uses.

// `!(x >= 0.0)` rejects NaN too; index loops mirror the maths.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod aem;
pub mod cem;
pub mod config;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod phantom;
pub mod recon;
pub mod scalar;
pub mod shape;

pub use error::{Error, Result};
pub use scalar::Real;

pub type RadiusProfile64 = shape::RadiusProfile<f64>;
pub type HeadLibrary64 = shape::HeadLibrary<f64>;
pub type ShapeBasis64 = shape::ShapeBasis<f64>;
pub type ReferenceMesh64 = mesh::ReferenceMesh<f64>;
pub type Mesh64 = mesh::Mesh<f64>;
pub type CemModel64 = cem::CemModel<f64>;
pub type Reconstruction64 = recon::Reconstruction<f64>;
pub type Whitener64 = aem::Whitener<f64>;
