//! Simulation and trace verification for Byzantine-tolerant convergence of
//! oblivious robots on a line under asynchronous (CORDA) scheduling.

pub mod adversary;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod engine;
pub mod geometry;
pub mod rules;
pub mod schedule;
pub mod sweep;
pub mod trace;
