//! Streaming message runtime over a simulated packet-switched interconnect.

pub mod channel;
pub mod collectives;
pub mod config;
pub mod error;
pub mod harness;
pub mod packet;
pub mod routing;
pub mod topology;
pub mod transport;

pub use error::{Result, SmiError};
