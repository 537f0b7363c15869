//! Leave-many-out feature selection for clickbait scoring.
//!
//! The pipeline turns short posts into a sparse feature matrix
//! ([`features`]), scores subsets of columns with ridge regression
//! ([`regression`]), estimates each feature's usefulness by averaging
//! leave-one-out errors over many randomized backward-removal runs
//! ([`lmo`]), and finally picks the best top-ranked subset ([`sweep`]).
//! [`pipeline`] wires the stages together for the command-line tool.

pub mod bitset;
pub mod dataset;
pub mod error;
pub mod features;
pub mod lmo;
pub mod pipeline;
pub mod pool;
pub mod regression;
pub mod sparse;
pub mod sweep;
pub mod tsv;

pub use bitset::ActiveSet;
pub use error::{Error, Result};
pub use sparse::SparseMatrix;
