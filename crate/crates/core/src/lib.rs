//! Compositional finite abstractions of networks of stochastic switched
//! systems with dwell time.
//!
//! The pipeline runs per subsystem: grid the state and internal-input boxes
//! ([`grid`]), integrate the Gaussian kernel over cells ([`abstraction`]),
//! certify the abstraction with a quadratic simulation function
//! ([`certificates`]), compose the certificates through a small-gain check
//! ([`composition`]), turn the composed constants into a closeness guarantee
//! ([`bounds`]), synthesize dwell-time respecting safety controllers
//! ([`synthesis`]) and validate everything by paired Monte Carlo rollouts
//! ([`simulate`]).

// NaN must fail range checks, so `!(x > 0.0)` is intended
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abstraction;
pub mod bounds;
pub mod certificates;
pub mod composition;
pub mod error;
pub mod grid;
pub mod kinf;
pub mod linalg;
pub mod model;
pub mod normal;
pub mod presets;
pub mod simulate;
pub mod synthesis;

pub use error::{Error, Result};
pub use kinf::KInfFn;
