//! Discrete-event simulator for broadcast channel access on two adjacent
//! 10 MHz vehicular channels, with and without channel bonding.

pub mod experiment;
pub mod mac;
pub mod medium;
pub mod metrics;
pub mod network;
pub mod phy;
pub mod plotdata;
pub mod scenario;
pub mod sim;
