//! Weight models for thermally coupled MZI meshes.
//!
//! A virtual chip ([`chip`]) stands in for hardware and produces calibration
//! and random measurement datasets. Three forward models ([`models`]) map
//! heater voltages to weight matrices in dB: a per-MZI physics model, a
//! per-path physics model with crosstalk terms, and a neural surrogate. They
//! are trained by [`fitting`], compared by [`eval`], and used to train and
//! stress an optical XOR classifier in [`xor`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chip;
pub mod error;
pub mod eval;
pub mod fitting;
pub mod mesh;
pub mod models;
pub mod xor;

pub use error::{Error, Result};

/// Derives an independent stream seed from a base seed and a label, so each
/// stage of an experiment gets its own reproducible generator.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined words.
    let mut z = base ^ stream.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
