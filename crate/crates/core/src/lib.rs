//! Response-based optimal memory encoding for noisy reservoirs.
//!
//! The pipeline measures a reservoir's zero-input fluctuations and its
//! impulse response on the allowed injection coordinates ([`probe`]), builds
//! the task-weighted memory operator and its power-constrained optimal
//! encoder ([`rome`]), and evaluates encoders by driving the reservoir and
//! fitting linear readouts ([`eval`]). [`bp`] provides the gradient-ascent
//! baseline that converges to the same encoder.

pub mod artifact;
pub mod bp;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod probe;
pub mod reservoirs;
pub mod rome;
pub mod rng;

pub use error::{Error, Result};
