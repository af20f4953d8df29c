//! Choosing alternates for quota-constrained deliberative panels whose
//! members may drop out.

pub mod deviation;
pub mod domain;
pub mod dropout;
pub mod error;
pub mod evaluate;
pub mod extensions;
pub mod rng;
pub mod select;
pub mod synth;

pub use error::{DataError, Error, Result};
pub use milp::Rational;
