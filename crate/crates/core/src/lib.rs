//! Heat exchange between a diffusive background and small, highly conducting
//! spherical inclusions.
//!
//! Three models share one voxel discretization:
//!
//! - [`model_finite`]: the two-phase heat equation with inclusion
//!   conductivity `sigma / eta`,
//! - [`model_infinite`]: the isothermal-inclusion limit, with every inclusion
//!   collapsed to a single super-node,
//! - [`model_homogenized`]: the two-temperature system obtained when the
//!   number of inclusions grows like `1 / epsilon`.
//!
//! [`harness`] runs the experiments connecting them (the `eta -> 0` and
//! `epsilon -> 0` limits and a closed-form ODE check), [`correctors`] holds
//! the closed-form capacity machinery, and [`diagnostics`] the norms and
//! weak-* pairings used to compare fields.
//!
//! Every backward-Euler step records an exact discrete energy balance in an
//! [`EnergyLedger`](ledger::EnergyLedger).

pub mod cli;
pub mod correctors;
pub mod diagnostics;
pub mod discretization;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod ledger;
pub mod model_finite;
pub mod model_homogenized;
pub mod model_infinite;
pub mod sparse;

pub use error::{Error, Result};
pub use geometry::{Domain, InclusionSet, Point};

/// Version string written into every JSON report.
pub const REPORT_VERSION: &str = env!("CARGO_PKG_VERSION");
