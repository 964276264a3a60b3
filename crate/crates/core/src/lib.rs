//! Flow-level performance models for long-lived TCP connections.
//!
//! Per-flow window models (CUBIC, Compound, New Reno) are combined with two
//! network solvers: an M/G/1 fixed point and a dual decomposition of a
//! throughput-maximization problem. A Monte-Carlo simulator of the same
//! window dynamics is included for cross-checking.

pub mod broyden;
pub mod chain;
pub mod compound;
pub mod config;
pub mod cubic;
pub mod error;
pub mod model;
pub mod mg1;
pub mod network;
pub mod opt;
pub mod sim;
pub mod window;

pub use error::{Error, Result};
