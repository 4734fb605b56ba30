//! Host side of the D.O.T.S. benchmark: provider transports, case bank
//! files, the run store, batch and monitoring runners, the HTTP service
//! and the command-line interface. All scoring lives in `dots_core`.

pub mod batch;
pub mod cli;
pub mod clock;
pub mod files;
pub mod monitor_host;
pub mod provider;
pub mod runner;
pub mod service;
pub mod sessions;
pub mod store;

pub use dots_core as core;
