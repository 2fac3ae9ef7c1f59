//! Series regression with confidence bands that stay valid when the number
//! of series terms is chosen by searching over a candidate set.
//!
//! The library fits least-squares series estimators (polynomials or splines),
//! computes heteroskedasticity-robust standard errors, and calibrates sup-t
//! critical values over the candidate set by Gaussian simulation from the
//! estimated cross-K correlation matrix or by a weighted bootstrap. Pointwise
//! intervals and uniform-in-x bands built with these critical values keep
//! their nominal level no matter which candidate the analyst ends up
//! reporting.

pub mod basis;
pub mod candidate;
pub mod error;
pub mod fit;
pub mod plm;
pub mod rng;
pub mod sim;
pub mod suptstat;

pub use error::{Error, Result};
