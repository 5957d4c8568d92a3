//! Spectrum sharing between a decode-and-forward relay network and ad-hoc
//! traffic modelled as two-state continuous-time Markov chains.

pub mod allocator;
pub mod channel;
pub mod config;
pub mod dualopt;
pub mod error;
pub mod oracle;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod sweep;
pub mod table;
pub mod traffic;
pub mod validate;

pub use error::{Error, Result};
