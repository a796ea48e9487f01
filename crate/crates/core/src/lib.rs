//! Perception-aware safety analysis for a discrete car / pedestrian system.
//!
//! The crate is `no_std` (with `alloc`) and contains the numerical heart of
//! the toolkit:
//!
//! * [`cm`]: label spaces, confusion matrices, distance bands and the
//!   column-normalized detection probabilities derived from them.
//! * [`detection`]: IoU matching of predictions to ground truth and the two
//!   confusion matrix builders (per object and per frame).
//! * [`model`]: the grid dynamics, observation spaces and the stopping
//!   controller.
//! * [`chain`]: explicit-state DTMC construction for the closed loop.
//! * [`safety`]: bad-state predicates and the reachability solver.
//! * [`sim`]: a seeded Monte Carlo simulator used as an independent oracle.
//!
//! File formats, CSV ingestion and the command line live in the `percheck`
//! companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod chain;
pub mod cm;
pub mod detection;
mod error;
pub mod model;
pub mod safety;
pub mod sim;
pub mod sweep;

pub use chain::{build_chain, MarkovChain, PerceptionModel, StateLabels};
pub use cm::{
    aggregate, band_for_distance, normalize_column, ClassSet, CmMode, ColumnDistribution,
    ConfusionMatrix, DistanceBands, DistanceParamCm, PropSet, ZeroColumnPolicy, EMPTY_LABEL,
};
pub use error::Error;
pub use model::{
    step_dynamics, AgentState, Controller, EnvState, Observation, Policy, ScenarioConfig,
    SystemState,
};
pub use safety::{bad_states, prob_safe, SafetySpec, SatisfactionResult, Solver};
pub use sim::{simulate, SimEstimate};
pub use sweep::{sweep, SweepGrid, SweepRow, Variant};

pub type Result<T> = core::result::Result<T, Error>;
