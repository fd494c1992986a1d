//! Population-level gradient dynamics of linear, deep linear and two-neuron
//! ReLU classifiers under spherically symmetric data, with closed-form
//! convergence envelopes and trajectory certification.

pub mod error;
pub mod gradient;
pub mod law;
pub mod models;
pub mod plane;
pub mod quadrature;
pub mod schedule;
pub mod dynamics;
pub mod bounds;
pub mod certify;

pub use error::{Error, Result};
