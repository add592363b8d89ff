//! Pseudo-observation regression for right-censored survival data.
pub mod bootstrap;
pub mod covariance;
pub mod data;
pub mod error;
pub mod functional;
pub mod gee;
pub mod inference;
pub mod pseudo;
pub mod rng;
pub mod simulation;
pub mod ustats;
pub mod veteran;
pub use error::{Error, Result};
