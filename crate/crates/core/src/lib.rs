//! Distributed symmetric key establishment over pre-shared random data.
//!
//! Field arithmetic, hash-based tags, threshold sharing, pre-shared random
//! data tables, the relay protocol, closed-form bounds and a deterministic
//! simulated network. Works without `std`; `alloc` is required.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod bounds;
pub mod field;
pub mod hashing;
pub mod protocol;
pub mod psrd;
pub mod sharing;
pub mod simnet;
