//! Seeded, deterministic federated-learning simulator for backdoor attacks
//! and defenses, built around a data-free trigger-generation filter.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod defenses;
pub mod error;
pub mod flcore;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod seed;

pub use error::{Error, Result};
