//! Analytic and Monte Carlo evaluation of cache-enabled hybrid mmWave / μWave
//! cellular networks.

pub mod catalog;
pub mod config;
pub mod error;
pub mod geometry;
pub mod link;
pub mod numerics;
pub mod qos;
pub mod sim;
pub mod sweep;

pub use error::{Error, Result};
