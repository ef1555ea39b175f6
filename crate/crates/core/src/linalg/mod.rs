//! Sparse linear algebra used by the QP solver.

pub mod ldl;
pub mod ordering;
pub mod sparse;

pub use sparse::CscMatrix;
