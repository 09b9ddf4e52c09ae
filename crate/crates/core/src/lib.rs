//! Three-phase distribution market dispatch.
//!
//! The crate is organised bottom-up:
//!
//! - [`netmodel`]: radial three-phase network, case files, the affine
//!   (linearized) power-flow model and the voltage imbalance index.
//! - [`qpsolver`]: dense primal-dual interior-point solver for convex QPs
//!   with equality, inequality and box constraints.
//! - [`dso`]: assembles the operator's welfare-maximising dispatch QP and
//!   turns its multipliers into per-phase active/reactive nodal prices.
//! - [`prosumer`]: price-taking agents that maximise their own surplus.
//! - [`market`]: one pricing interval end to end, plus the flat tariff
//!   baseline and settlement.
//! - [`scenarios`]: named scenario presets and the Monte Carlo harness.
//! - [`report`]: delimited tables for plotting.
//!
//! All internal quantities are per-unit. MW, MVar and $ only appear at the
//! boundaries (case files, reports, CLI).

pub mod cli;
pub mod dso;
pub mod error;
pub mod market;
pub mod netmodel;
pub mod prosumer;
pub mod qpsolver;
pub mod report;
pub mod scenarios;

pub use error::{Error, Result};

/// The bundled three-phase 33-bus case.
pub const IEEE33_CASE_JSON: &str = include_str!("../data/ieee33_3ph.json");
