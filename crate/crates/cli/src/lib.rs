//! Library side of the `netpi` binary: configuration parsing and the verbs.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod run;

pub use config::{emit_config, parse_config, RunConfig};
pub use run::{execute, Report, Verb};
