#![allow(clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord)]

pub mod configurator;
pub mod construct;
pub mod epm;
pub mod error;
pub mod model;
pub mod rundata;
pub mod runner;
pub mod seed;
pub mod space;
pub mod synthetic;
pub mod transfer;
pub mod evaluation;
pub mod scenario;
pub mod cli;
pub mod wrapper;

pub use error::{Error, Result};
