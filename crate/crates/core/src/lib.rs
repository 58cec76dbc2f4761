//! Performance analysis of a dual-hop link from a UAV to a sea-surface relay
//! (Rician RF hop) and on to an underwater vehicle (mixture EGG optical hop).

pub mod altitude;
pub mod channel;
pub mod error;
pub mod foxh;
pub mod mc;
pub mod metrics;
pub mod quad;
pub mod specfun;
pub mod stats;

pub use error::{Error, Result};
