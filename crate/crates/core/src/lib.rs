pub mod config;
pub mod ergodics;
pub mod error;
pub mod expr;
pub mod harness;
pub mod jumps;
pub mod limit;
pub mod noise;
pub mod poisson;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod spline;
pub mod stats;
pub mod variance;

pub use error::{Error, Result};
