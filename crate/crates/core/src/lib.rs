//! Core library of the Fortran HLS bridge: the IR model and the passes that
//! turn front-end IR into v7-dialect IR for the HLS back end, plus the
//! Fortran source preprocessor.

pub mod cfg;
pub mod downgrade;
pub mod fortran;
pub mod ir;
pub mod pragma;
pub mod stream;
#[cfg(feature = "testkit")]
pub mod testkit;
