//! Synthesis and verification of pixel-based reconfigurable beamforming
//! networks that emulate a fluid antenna system (FAS).

pub mod cascade;
pub mod cell;
pub mod channel;
pub mod error;
pub mod fas;
pub mod network;
pub mod optimizer;
pub mod seed;

pub use error::{Error, Result};
