//! Monte Carlo laboratory for the 1+1 dimensional stochastic heat equation
//! started from drifted two-sided Brownian data and the continuum directed
//! polymer it encodes.

pub mod boundary;
pub mod bounds;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod identities;
pub mod numeric;
pub mod oracle;
pub mod polymer;
pub mod report;
pub mod rng;
pub mod she;
pub mod stats;

pub use error::{Result, SimError};
pub use grid::GridSpec;
