#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod robust;

pub use error::{Error, Result};
pub mod calendar;
pub mod constraints;
pub mod dataset;
pub mod estimator;
pub mod baselines;
pub mod methods;
pub mod market;
pub mod shaper;
pub mod synthetic;
pub mod backtest;
