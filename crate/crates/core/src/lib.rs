//! Numerical search and classification of periodic orbits for time-dependent
//! Hamiltonian systems on the cotangent bundle of the torus `T^n = R^n / Z^n`.
//!
//! The time-1 map of a Hamiltonian flow is factored into a product of
//! symplectic twist maps. Periodic orbits then correspond to critical points
//! of a finite-dimensional discrete action functional (a sum of stage
//! generating functions), which this crate locates, certifies against an
//! isolating block, and classifies by Floquet multipliers computed along two
//! independent routes.
//!
//! All state lives in the universal cover `R^n`; reduction mod 1 happens only
//! when reporting. The crate is `no_std` (with `alloc`); IO, configuration and
//! file formats live in the companion CLI crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod action;
pub mod dynamics;
pub mod error;
mod fmath;
pub mod geometry;
mod integrate;
pub mod linking;
pub mod maps;
pub mod report;
pub mod rng;
pub mod stability;
pub mod tol;
pub mod twist;

pub use error::{Error, Result};
pub use geometry::{CotangentPoint, MetricField, TorusMode};
