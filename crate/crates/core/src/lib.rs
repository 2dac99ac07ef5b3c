//! Non-reversible simulated tempering (NRST) as a regenerative MCMC method.
//!
//! The crate covers the lifted tempering kernel and its reversible baseline
//! ([`st_kernels`]), slice-sampling explorers ([`explore`]), regenerative
//! estimators and the tour effectiveness diagnostic ([`stats`]), the
//! self-tuning pipeline for grids, affinities and exploration steps
//! ([`adapt`]), reproducible tour-parallel execution ([`runner`]), worker-pool
//! planning ([`planner`]) and a set of benchmark models ([`bench_models`]).

// Guards of the form `!(x > 0.0)` reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod bench_models;
pub mod error;
pub mod explore;
pub mod model;
pub mod planner;
pub mod runner;
pub mod st_kernels;
pub mod stats;

pub use error::{NrstError, Result};
pub use model::{acceptance_probability, log_tempered_density, pseudo_prior, PathModel, Schedule, TemperedModel};
pub use st_kernels::{ChainState, Explorers, IdealIndexChain, TourTrace, Variant};
