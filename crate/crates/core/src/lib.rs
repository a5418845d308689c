//! Constructive periodic homogenization for second order elliptic systems
//! with fast oscillating coefficients.
//!
//! The pipeline: solve the periodic cell problems on the unit cell, assemble
//! the homogenized operator, locate an isolated eigenvalue cluster, build the
//! two-scale correction ledger order by order, and validate the truncated
//! expansions against direct fine-grid eigensolves of the perturbed operator.

pub mod cell;
pub mod fields;
pub mod homogenize;
pub mod linalg;
pub mod operator;
pub mod spectra;
pub mod twoscale;
