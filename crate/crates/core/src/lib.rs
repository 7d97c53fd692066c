//! Componentwise gradient boosting with constrained P-spline base-learners.

pub mod basis;
pub mod boost;
pub mod data;
pub mod error;
pub mod infer;
pub mod learner;
pub mod linalg;
pub mod penalty;
pub mod persist;
pub mod simulate;
pub mod solver;

pub use data::Dataset;
pub use error::{Error, Result};
