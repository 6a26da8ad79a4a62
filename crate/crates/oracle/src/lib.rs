//! Independent reference implementations used to cross-check the controller:
//! a QP oracle for the velocity optimizer, dense-sampling and exact-clipping
//! collision oracles, and the seeded randomized suites built on them.

pub mod geometry;
pub mod qp;
pub mod suites;

pub use suites::{run_suite, CaseOutcome, Suite, SuiteReport, DEFAULT_SEED};
