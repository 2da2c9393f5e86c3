//! Core numerics for estimating rare-event probabilities by surrogate-guided
//! stratified sampling.
//!
//! A cheap linear surrogate of an expensive objective partitions the input
//! space into strata. Stratum weights come from a large pool of surrogate
//! evaluations, conditional exceedance probabilities come from a Laplace
//! residual model and from observed evaluations, and the evaluation budget is
//! spread across strata to minimize the variance of the stratified estimator.
//!
//! The crate is `no_std` and only needs `alloc`. Process management, file
//! formats and the campaign driver live in the companion `strata` crate.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod allocation;
pub mod conditional;
mod error;
pub mod estimator;
pub mod rng;
pub mod space;
pub mod strata;
pub mod surrogate;
pub mod synthetic;

pub use allocation::{AllocationPlan, Candidate, Rounding};
pub use conditional::{ConditionalTable, LaplaceResidualModel};
pub use error::{Error, Result};
pub use estimator::RareEventEstimate;
pub use space::{ParameterDef, ParameterSpace, ParameterVector, SampleRecord};
pub use strata::{StratumSet, StratumWeights};
pub use surrogate::{SigmaMode, SurrogateModel};
