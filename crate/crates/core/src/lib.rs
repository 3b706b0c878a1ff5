//! Decentralized SGD simulator with consensus-distance measurement and control.

pub mod consensus;
pub mod engine;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod oracle;
pub mod problems;
pub mod rng;
pub mod states;
pub mod topology;
pub mod trace;

pub use error::{Error, Result};
pub use states::NodeStates;
