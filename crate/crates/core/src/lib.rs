#![no_std]
//! Core of the D.O.T.S. evaluation harness: case model, model gateway,
//! dialogue engine, evaluator, scoring, statistics and regression monitoring.
//! Everything here is free of IO; the `dots` crate supplies files, HTTP and
//! threads.

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod aggregate;
pub mod case;
pub mod clock;
pub mod dialogue;
pub mod evaluator;
pub mod gateway;
pub mod icd10;
pub mod metric;
pub mod monitor;
pub mod pipeline;
pub mod scoring;
pub mod stats;
pub mod text;

#[cfg(test)]
mod testutil;
