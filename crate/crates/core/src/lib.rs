// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod deployment;
pub mod error;
pub mod mi_bound;
pub mod models;
pub mod random;
pub mod selftest;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
