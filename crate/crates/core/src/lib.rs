//! Sampled-data boundary control of one-dimensional linear parabolic PDEs.
//!
//! The crate computes Sturm–Liouville eigensystems, designs reduced-model and
//! backstepping boundary feedback, bounds the admissible sampling period,
//! simulates the zero-order-hold closed loop exactly in modal coordinates and
//! cross-checks it against a finite-difference solver.

pub mod coefficient;
pub mod error;
pub mod quadrature;
pub mod sl_operator;

pub use error::{Error, Result};
pub mod fd_oracle;
pub mod backstepping;
pub mod controller;
pub mod modal_sim;
pub mod reduced_design;
pub mod analysis;
pub mod cli;
