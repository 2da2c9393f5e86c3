//! Adaptive stratified estimation of rare-event probabilities for expensive
//! black-box objectives: evaluators, campaign orchestration and run
//! directories. The numerical core lives in `strata-core`.

pub mod campaign;
pub mod config;
pub mod error;
pub mod evaluator;
pub mod rundir;

pub use campaign::{final_report, naive_monte_carlo, parallel_oracle, FinalReport, RunState, Runner};
pub use config::{EvaluatorConfig, Mode, RunConfig};
pub use error::{Result, RunError};
pub use evaluator::{
    evaluate_batch, EvaluationRequest, EvaluationResult, Evaluator, ExternalEvaluator, SyntheticEvaluator,
};
pub use rundir::RunDir;
pub use strata_core as core;
