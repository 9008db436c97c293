//! Limit tori of `T`-periodic piecewise-smooth ODEs through their time-`T` maps.
//!
//! The pipeline runs bottom-up: [`model`] describes a system, [`integrate`]
//! flows it with exact switching-time location, [`tmap`] wraps the flow as a
//! planar map with derivatives, [`melnikov`] computes the averaged functions,
//! [`nsbif`] performs the Neimark-Sacker analysis and [`curve`] locates the
//! invariant closed curve. [`pwl3d`] ships the 3D piecewise linear example
//! together with its closed-form oracles.

pub mod cli;
pub mod config;
pub mod curve;
pub mod error;
pub mod integrate;
pub mod melnikov;
pub mod model;
pub mod nsbif;
pub mod output;
pub mod pwl3d;
pub mod roots;
pub mod tmap;

pub use error::{Error, Result};
pub use model::{ParameterPoint, PiecewiseSystem, State, SwitchingFunction, ZoneField};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
