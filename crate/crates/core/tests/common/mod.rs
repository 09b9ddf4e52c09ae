//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod sweep;
pub mod qp_oracle;
pub mod toy;
