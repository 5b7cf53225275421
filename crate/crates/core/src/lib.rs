//! Projection of morphological tags across word-aligned bitext, and two
//! taggers trained from the projected constraints: a WARP-ranked
//! joint-embedding model and a log-linear feature HMM.
//!
//! Data-parallel stages take an [`Execution`] argument. With the default
//! `parallel` feature they may use rayon; results are identical either way.

pub mod corpus;
pub mod eval;
pub mod exec;
pub mod features;
pub mod hmm;
pub mod projection;
pub mod wsabie;

pub use exec::Execution;
