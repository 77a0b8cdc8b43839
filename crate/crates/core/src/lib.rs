//! Decentralized oracle network simulator.

pub mod adversary;
pub mod config;
pub mod gathering;
pub mod ids;
pub mod queue;
pub mod rating;
pub mod relaychain;
pub mod report;
pub mod selection;
pub mod selftest;
pub mod sim;
pub mod vrf;
