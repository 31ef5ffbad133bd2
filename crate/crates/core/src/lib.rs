//! Kalman filtering, noise calibration, rule-program search and the
//! supporting statistics, without any dependency on `std`.
//!
//! File formats, the command line and threading live in the `kerule` crate.

#![no_std]

extern crate alloc;

pub mod calibration;
pub mod datasets;
pub mod evaluate;
pub mod evolve;
pub mod exec;
pub mod filters;
pub mod linalg;
pub mod rng;
pub mod ruledsl;
pub mod simulators;
pub mod statespace;
pub mod theory;

pub use exec::{Executor, Sequential};
pub use linalg::{Matrix, Vector};
