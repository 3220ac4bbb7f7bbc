//! Streaming keyword spotting as a two-stage cascade.
//!
//! The crate is `no_std` (it needs `alloc`) so the always-on first stage can be
//! built for a memory-constrained DSP target. Everything that touches files,
//! processes or threads lives in the companion `kws` crate.
//!
//! Pipeline per stage:
//!
//! ```text
//! PCM i16 ──► frontend (log-mel) ──► inference (8-bit encoder) ──► decoder (ordered max-product)
//! ```
//!
//! [`cascade`] wires a small stage-1 detector to a larger stage-2 detector over a
//! ring buffer of recent audio, optionally followed by [`speaker`] verification.
//! [`evaluation`] measures false alarms per hour and false reject rate and
//! composes them into cascade operating-point tables.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cascade;
pub mod decoder;
pub mod error;
pub mod evaluation;
pub mod frontend;
pub mod inference;
pub mod speaker;

mod math;

pub use error::{Error, Result};
