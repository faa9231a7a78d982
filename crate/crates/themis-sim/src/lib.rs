//! Event-driven simulator and policy library for finish-time-fair GPU
//! cluster scheduling.
//!
//! The library models ML apps bidding for GPU leases in a partial-allocation
//! auction run by a central arbiter, alongside baseline schedulers, with a
//! deterministic discrete-event engine and a metrics harness on top.

pub mod app;
pub mod auction;
pub mod bidding;
pub mod cluster;
pub mod config;
pub mod error;
pub mod metrics;
pub mod props;
pub mod schedulers;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};
