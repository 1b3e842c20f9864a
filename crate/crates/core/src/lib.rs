//! Hydrogen-blend pipeline transport simulation and graph-enhanced operator
//! networks for estimating hydrogen mass fraction from sparse measurements.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod network;
pub mod nn;
pub mod train;
pub mod transport;
