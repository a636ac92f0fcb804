//! Numerical checks of the convergence analysis: exact enumeration on small
//! instances, Monte Carlo on larger ones, and bound checks on recorded runs.

pub mod constants;
pub mod drift;
pub mod martingale;
pub mod report;
pub mod sampling;
pub mod sequential;
pub mod suites;
pub mod theorem;

pub use report::{CheckKind, VerificationReport};
