//! Tract-level health disparity modeling toolkit.
//!
//! The crate covers the whole pipeline from raw census/CDC extracts to
//! evaluated models:
//!
//! * [`dataset`] loads tract-keyed CSV tables, normalizes nulls, standardizes
//!   column names and inner-joins the sources with full discard accounting.
//! * [`stats`] provides Pearson correlation matrices, top-k correlated feature
//!   selection and group comparisons.
//! * [`linreg`] fits single-variable least-squares polynomials (degree 1..=4).
//! * [`tree`] grows regression trees that minimize the unweighted sum of the
//!   child-node variances, with mean-valued leaves.
//! * [`forest`] bags those trees and averages their predictions.
//! * [`eval`] runs k-fold cross-validation and depth sweeps.
//! * [`pipeline`] binds everything into the `tractwise` command line tool.

pub mod dataset;
pub mod eval;
pub mod forest;
pub mod linreg;
pub mod matrix;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod svg;
pub mod tree;

pub use matrix::Matrix;
