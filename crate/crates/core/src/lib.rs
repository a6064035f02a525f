//! Core of a secrecy-preserving ballot-level risk-limiting audit.
//!
//! Election officials publish one contest-specific cast vote record (CCVR)
//! file per contest, with every ballot identifier replaced by a salted
//! SHA-256 commitment, plus a public ballot style file. Observers can check
//! those files for consistency, draw a reproducible sample of ballots from
//! a public seed, have the official open the commitments of the sampled
//! ballots only, and run a Kaplan-Markov comparison audit on the result.
//!
//! This crate holds the pure parts of that pipeline and builds without `std`
//! (it needs `alloc`). File formats, transcripts, the simulator and the CLI
//! live in the `soba` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod audit;
pub mod checks;
pub mod commit;
mod error;
pub mod model;
pub mod publish;
pub mod sampler;

pub use error::{Error, Result};
