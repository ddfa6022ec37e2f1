//! PWM-induced signal injection.
//!
//! A PWM encoder driving `x' = f(x) + g(x) u` injects its own zero-mean
//! probing signal. The resulting ripple in the measured output carries the
//! "virtual measurement" `epsilon h'(x) g(x)`, which [`demod`] recovers and a
//! controller can use as an extra output. [`sim`] integrates the switched
//! loop exactly and the averaged loop it should reproduce; [`analysis`]
//! checks the ripple and convergence-order predictions on the resulting
//! traces.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod control;
pub mod demod;
pub mod error;
pub mod noise;
pub mod plant;
pub mod plot;
pub mod pwm;
pub mod sim;
pub mod validate;

pub use error::{Error, Result};
