//! Cost-optimal geographical partitioning under individual and group
//! fairness constraints.
//!
//! The solver runs stochastic approximation on a finite-dimensional concave
//! dual and extracts the partition as a generalized additively weighted
//! Voronoi diagram: location x goes to the facility minimizing
//! c(x, k) - E(w_{k,Z} | X = x). Two modes are supported: free region sizes
//! (the sizes emerge as multipliers) and prescribed sizes.

pub mod config;
pub mod costmodel;
pub mod error;
pub mod oracle;
pub mod partition;
pub mod population;
pub mod report;
pub mod simplex;
pub mod solver;

pub use error::{Error, Result};
