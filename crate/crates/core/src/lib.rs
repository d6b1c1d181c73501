//! Particle approximations of nonlinear filters whose signal coefficients
//! depend on the law of the signal.
//!
//! The crate works with `alloc` only when the default `std` feature is off;
//! `std` adds rayon-backed parallel loops with identical results.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
mod linalg;
pub mod model;
pub mod mollifier;
pub mod presets;
mod par;
pub mod rng;
pub mod filter;
pub mod fpe;
pub mod sde;

pub use error::{Error, Result};
