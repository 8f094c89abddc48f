//! Exact stochastic simulation of a birth-death process of types that carry a
//! uniform fitness mark, with the excursion/regeneration decomposition, a
//! renewal-equation solver, the monotone coupling against the all-random
//! killing process, and the goodness-of-fit machinery used to check the
//! model's limit laws.
//!
//! The population `X(t)` jumps `n -> n+1` at rate `n*lambda` and `n -> n-1`
//! at rate `n` (never below one type). Every new type receives an independent
//! uniform(0,1) fitness. A death removes a uniformly chosen type with
//! probability `r` and the least fit type otherwise.

// `!(x > 0.0)` style guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coupling;
pub mod engine;
pub mod error;
pub mod regen;
pub mod renewal;
pub mod replicate;
pub mod rng;
pub mod stats;
pub mod verify;

pub use engine::{
    EventKind, EventLog, EventRecord, ModelParams, Observation, PopulationState, TypeRecord,
};
pub use error::{Error, Result};
