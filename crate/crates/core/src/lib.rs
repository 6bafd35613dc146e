//! Geometry-based stochastic MIMO channel generation.
//!
//! Links are described by flattened subpath sets ([`geometry::LinkMultipath`])
//! drawn by [`params`]. [`engine`] turns them into `R x S` frequency responses
//! either by direct summation or through precomputed spatial matrices;
//! [`polarized`] extends the factored form to dual-polarized arrays.
//! [`covariance`] derives spatial covariances from the same factorization and
//! compares them with time and ensemble sample estimates. [`bench`] times the
//! two generation routes and [`io`] holds configuration and file output.

pub mod antenna;
pub mod bench;
pub mod covariance;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod params;
pub mod polarized;
pub mod rng;

pub use error::{Error, Result};
