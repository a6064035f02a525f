//! Files, transcripts, sessions, simulation, and the HTTP service for
//! secrecy-preserving ballot-level audits. The protocol itself lives in
//! `soba-core`.

pub mod formats;
pub mod service;
pub mod session;
pub mod sim;
pub mod transcript;
