//! Tri-hybrid MIMO precoding with reconfigurable antenna patterns.
//!
//! Antenna radiation patterns are expanded in real spherical harmonics and
//! optimized jointly with the digital and analog precoders for the weighted
//! sum rate of a multi-user downlink.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod decomposition;
pub mod error;
pub mod harmonics;
pub mod harness;
pub mod projection;
pub mod wmmse;

pub use error::{Error, Result};
