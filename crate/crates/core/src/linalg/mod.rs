//! Dense and sparse linear algebra kernels, generic over [`Real`](crate::Real).

pub mod cholesky;
pub mod dense;
pub mod ordering;
pub mod sparse;

pub use cholesky::{SparseCholesky, SymbolicCholesky};
pub use dense::{symmetric_eigen, thin_qr, DenseMatrix, ThinQr};
pub use sparse::{CsrMatrix, TripletBuilder};
