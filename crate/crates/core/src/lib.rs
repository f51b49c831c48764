//! Adaptive least-squares finite elements for second-order elliptic
//! problems in 2D.
//!
//! A problem `-div(A grad u) + b . grad u + c u = f` with homogeneous
//! Dirichlet data is rewritten as the first-order system
//! `L(u, sigma) = (-div sigma + b . grad u + c u, A grad u - sigma) = (f, 0)`
//! and discretized by minimizing `||F - L v||` over continuous piecewise
//! linears times lowest-order Raviart-Thomas fields. The residual on each
//! element is the error indicator; Doerfler marking and newest vertex
//! bisection close the adaptive loop. Linear systems are solved either by
//! sparse Cholesky or by a few nested PCG steps per level.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the precision.

// `!(x > 0)` also rejects NaN; dense kernels index several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod cli_io;
pub mod driver;
pub mod error;
pub mod estimator;
pub mod marking;
pub mod mesh;
pub mod problems;
pub mod quadrature;
pub mod scalar;
pub mod solver;
pub mod sparse;
pub mod spaces;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Real = f64;

pub type Mesh64 = mesh::Mesh<f64>;
pub type Mesh32 = mesh::Mesh<f32>;
pub type Problem64 = problems::Problem<f64>;
pub type Problem32 = problems::Problem<f32>;
pub type SparseSpd64 = sparse::SparseSpd<f64>;
pub type SparseSpd32 = sparse::SparseSpd<f32>;
pub type CoefVec64 = spaces::CoefVec<f64>;
pub type CoefVec32 = spaces::CoefVec<f32>;
pub type EstimatorReport64 = estimator::EstimatorReport<f64>;
pub type AdaptiveHistory64 = driver::AdaptiveHistory<f64>;
pub type AdaptiveHistory32 = driver::AdaptiveHistory<f32>;
