//! Transient simulation of passive gas pipeline networks.

pub mod graph;
pub mod linalg;
pub mod fvm;
pub mod dae;
pub mod sim;
