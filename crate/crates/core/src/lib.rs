//! Discrete-time simulator and scheduling library for multi-region
//! collaborative perception.
//!
//! A base station serves a set of regions, each with a handful of sensors
//! that extract, transmit and fuse features. Every slot the station picks
//! which idle regions start a new perception task and how much
//! communication volume each task may use. Perception quality is tracked
//! through a fitted average-precision surface over information age and
//! volume.
//!
//! Module map:
//!
//! - [`penalty`]: AP surfaces, instantaneous/cumulative penalty, utility index, fitting.
//! - [`env`]: delay and rate distributions, the delay pipeline, seeded event streams.
//! - [`region`]: per-region AoI, virtual queue and task lifecycle.
//! - [`volume`]: per-slot volume optimization and the refresh-age objective.
//! - [`sched`]: TAMP and the four baseline schedulers.
//! - [`sim`]: slot loop, metrics, sweeps and the renewal oracle.
//! - [`config`]: scenario configuration parsing and validation.
//! - [`oracle`]: renewal and refresh-objective self-check batteries.
//! - [`output`]: CSV writers for per-slot traces, summaries and sweeps.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod env;
pub mod error;
pub mod oracle;
pub mod output;
pub mod penalty;
pub mod region;
pub mod sched;
pub mod sim;
pub mod volume;

pub use error::{Error, Result};
