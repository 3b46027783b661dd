#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baseline;
pub mod commands;
pub mod config;
pub mod error;
pub mod estimator;
pub mod generator;
pub mod io;
pub mod manifest;
pub mod markov;
pub mod params;
pub mod rng;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
