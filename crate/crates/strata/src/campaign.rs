//! The adaptive campaign: preliminary batch, allocation iterations and the
//! final estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use strata_core::allocation::{optimal_weights, select_candidates};
use strata_core::rng::{substream, Stream};
use strata_core::strata::{count_pool_block, pool_blocks};
use strata_core::synthetic::{oracle_block, oracle_from_hits, SyntheticObjective, ORACLE_BLOCK};
use strata_core::{
    AllocationPlan, ConditionalTable, ParameterVector, RareEventEstimate, SampleRecord, StratumSet, StratumWeights,
    SurrogateModel,
};

use crate::config::{Mode, PreliminaryDesign, RunConfig};
use crate::error::{Result, RunError};
use crate::evaluator::{evaluate_batch, EvaluationRequest, Evaluator};
use crate::rundir::RunDir;

/// Largest tolerated share of failed evaluations in one batch.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub id: u64,
    pub iteration: u32,
    pub params: ParameterVector,
    pub message: String,
}

/// Surrogate, strata and weights in force at some point of the campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub model: SurrogateModel,
    pub strata: StratumSet,
    pub weights: StratumWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub budget: usize,
    /// Conditional probabilities the allocation was computed from, on the
    /// strata in force when the iteration started.
    pub allocation_table: ConditionalTable,
    /// `p2` fed to the allocation (predicted or hybrid).
    pub allocation_p2: Vec<f64>,
    pub plan: AllocationPlan,
    pub new_ids: Vec<u64>,
    pub failed_ids: Vec<u64>,
    /// Stage after the iteration; differs from the starting one only in
    /// multi-iteration mode.
    pub stage: Stage,
    pub table: ConditionalTable,
    pub estimate: RareEventEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config: RunConfig,
    pub samples: Vec<SampleRecord>,
    pub failures: Vec<FailureRecord>,
    pub next_id: u64,
    pub preliminary: Stage,
    pub current: Stage,
    pub iterations: Vec<IterationRecord>,
}

impl RunState {
    pub fn evaluations(&self) -> usize {
        self.samples.len()
    }

    pub fn latest_estimate(&self) -> Option<&RareEventEstimate> {
        self.iterations.last().map(|it| &it.estimate)
    }

    /// Configured budgets not yet spent, or none once the stopping rule fired.
    pub fn remaining_budgets(&self) -> Vec<usize> {
        if let (Some(limit), Some(est)) = (self.config.stop_below_unbiased_variance, self.latest_estimate()) {
            if est.unbiased_variance < limit {
                return Vec::new();
            }
        }
        self.config.budgets.iter().skip(self.iterations.len()).copied().collect()
    }
}

/// Stratum weights from the streamed surrogate pool, blocks counted in
/// parallel. Identical to the sequential count for any thread count.
pub fn pool_weights(
    strata: &StratumSet,
    model: &SurrogateModel,
    pool_size: u64,
    seed: u64,
    iteration: u64,
) -> Result<StratumWeights> {
    let counts = (0..pool_blocks(pool_size))
        .into_par_iter()
        .map(|b| count_pool_block(strata, model, pool_size, seed, iteration, b))
        .reduce(
            || vec![0u64; strata.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(StratumWeights::from_counts(counts, pool_size)?)
}

/// Brute-force exceedance probability of a synthetic objective and its
/// standard error.
pub fn parallel_oracle(objective: &SyntheticObjective, critical_value: f64, n: u64, seed: u64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(RunError::Config("oracle needs at least one draw".into()));
    }
    let hits: u64 = (0..n.div_ceil(ORACLE_BLOCK))
        .into_par_iter()
        .map(|b| oracle_block(objective, critical_value, n, seed, b))
        .sum();
    Ok(oracle_from_hits(hits, n))
}

/// Surrogate noise below this (relative to the objective scale) counts as
/// an exact fit and switches to the two-stratum layout.
const EXACT_FIT_SIGMA: f64 = 1e-12;

fn build_stage(config: &RunConfig, samples: &[SampleRecord], iteration: u64) -> Result<Stage> {
    let space = config.space()?;
    let model = SurrogateModel::fit(&space, samples, config.sigma_mode)?;
    let scale = samples.iter().filter_map(|s| s.j_true).fold(0.0f64, |m, j| m.max(j.abs()));
    let strata = if model.sigma <= EXACT_FIT_SIGMA * (1.0 + scale) {
        log::info!("surrogate fits exactly (sigma {:e}); using two strata split at the critical value", model.sigma);
        StratumSet::two_stratum(config.critical_value)
    } else {
        StratumSet::build(config.critical_value, model.sigma, config.inner_strata, config.band_halfwidth_sigmas)?
    };
    let weights = pool_weights(&strata, &model, config.pool_size, config.seed, iteration)?;
    Ok(Stage { model, strata, weights })
}

fn rebin(stage: &Stage, samples: &mut [SampleRecord]) -> Result<()> {
    for s in samples {
        let j = stage.model.predict(&s.params)?;
        s.j_tilde = Some(j);
        s.stratum = Some(stage.strata.bin(j)?);
    }
    Ok(())
}

fn estimate_on(
    stage: &Stage,
    samples: &[SampleRecord],
    n_confident: u32,
) -> Result<(ConditionalTable, RareEventEstimate)> {
    let table = ConditionalTable::compute(&stage.strata, samples, n_confident)?;
    let estimate = RareEventEstimate::compute(
        &stage.weights.p1,
        &table.p2_extrapolated,
        &table.counts,
        Some(&stage.weights.variance),
    )?;
    Ok((table, estimate))
}

/// Drives evaluations and persistence for one campaign.
pub struct Runner<'a> {
    pub evaluator: &'a dyn Evaluator,
    pub parallelism: usize,
    pub run_dir: Option<&'a RunDir>,
}

struct Evaluated {
    samples: Vec<SampleRecord>,
    failures: Vec<FailureRecord>,
}

impl Runner<'_> {
    fn evaluate(
        &self,
        stage_name: &str,
        iteration: u32,
        first_id: u64,
        params: Vec<ParameterVector>,
    ) -> Result<Evaluated> {
        let requests: Vec<EvaluationRequest> = params
            .into_iter()
            .enumerate()
            .map(|(k, params)| EvaluationRequest { id: first_id + k as u64, params })
            .collect();
        log::info!("{stage_name}: evaluating {} points with {}", requests.len(), self.evaluator.describe());
        let outcome = evaluate_batch(self.evaluator, &requests, self.parallelism);
        let total = requests.len();
        if outcome.failures.len() as f64 > MAX_FAILURE_SHARE * total as f64 {
            return Err(RunError::EvaluatorThreshold {
                stage: stage_name.to_string(),
                failed: outcome.failures.len(),
                total,
                first: outcome.failures[0].error.to_string(),
            });
        }
        let mut by_id = requests.into_iter();
        let mut samples = Vec::with_capacity(outcome.results.len());
        let mut failures = Vec::new();
        let mut results = outcome.results.into_iter().peekable();
        let mut failed = outcome.failures.into_iter().peekable();
        for req in by_id.by_ref() {
            if results.peek().is_some_and(|r| r.id == req.id) {
                let r = results.next().expect("peeked");
                let mut s = SampleRecord::new(req.id, req.params, iteration);
                s.j_true = Some(r.objective);
                samples.push(s);
            } else {
                let f = failed.next().expect("each request has an outcome");
                debug_assert_eq!(f.id, req.id);
                failures.push(FailureRecord {
                    id: req.id,
                    iteration,
                    params: req.params,
                    message: f.error.to_string(),
                });
            }
        }
        Ok(Evaluated { samples, failures })
    }

    /// Draws, evaluates and fits the preliminary batch.
    pub fn preliminary(&self, config: RunConfig) -> Result<RunState> {
        config.validate()?;
        let space = config.space()?;
        let mut rng = substream(config.seed, Stream::PreliminaryDraws, &[]);
        let params = match config.preliminary {
            PreliminaryDesign::Uniform => space.sample_uniform(&mut rng, config.preliminary_count),
            PreliminaryDesign::Grid { split, outer, inner, shared_inner } => {
                space.sample_grid(&mut rng, split, outer, inner, shared_inner)?
            }
        };
        let Evaluated { mut samples, failures } = self.evaluate("preliminary batch", 0, 0, params)?;
        let stage = build_stage(&config, &samples, 0)?;
        rebin(&stage, &mut samples)?;
        log::info!(
            "preliminary surrogate: sigma {:.6e}, {} strata, p1[0] = {:.4}",
            stage.model.sigma,
            stage.strata.len(),
            stage.weights.p1[0]
        );
        let state = RunState {
            next_id: config.preliminary_count as u64,
            config,
            samples,
            failures,
            preliminary: stage.clone(),
            current: stage,
            iterations: Vec::new(),
        };
        if let Some(dir) = self.run_dir {
            dir.save_preliminary(&state)?;
        }
        Ok(state)
    }

    /// One allocation round spending `budget` new evaluations.
    pub fn iterate(&self, state: &mut RunState, budget: usize) -> Result<()> {
        let k = state.iterations.len() as u32 + 1;
        if state.config.mode == Mode::Single && k > 1 {
            return Err(RunError::Config("a single-iteration run takes exactly one iteration".into()));
        }
        let config = &state.config;
        let stage = &state.current;
        let allocation_table = ConditionalTable::compute(&stage.strata, &state.samples, config.n_confident)?;
        let allocation_p2 = match config.mode {
            Mode::Single => allocation_table.p2_pred.clone(),
            Mode::Multi => allocation_table.p2_mix.clone(),
        };
        let mut weights = optimal_weights(&stage.weights.p1, &allocation_p2)?;
        for (w, &hits) in weights.iter_mut().zip(&stage.weights.counts) {
            if hits < config.min_pool_hits {
                *w = 0.0;
            }
        }
        if budget > 0 && !weights.iter().any(|&w| w > 0.0) {
            log::warn!("iteration {k}: no stratum carries variance; allocating in proportion to p1");
            weights = stage.weights.p1.clone();
        }
        let existing: Vec<usize> = allocation_table.counts.iter().map(|&n| n as usize).collect();
        let plan =
            AllocationPlan::from_weights(weights, &existing, budget, config.rounding).map_err(RunError::Allocation)?;
        if let Some(dir) = self.run_dir {
            dir.save_allocation(k, &stage.strata, &allocation_table, &allocation_p2, &plan)?;
        }
        let candidates = select_candidates(
            &stage.strata,
            &stage.model,
            &plan.additional,
            config.seed,
            k as u64,
            config.candidate_cap,
            Some(&stage.weights.p1),
        )
        .map_err(RunError::Allocation)?;

        let first_id = state.next_id;
        let params = candidates.iter().map(|c| c.params.clone()).collect();
        let Evaluated { samples: mut fresh, failures } =
            self.evaluate(&format!("iteration {k}"), k, first_id, params)?;
        rebin(stage, &mut fresh)?;
        let new_ids: Vec<u64> = fresh.iter().map(|s| s.id).collect();
        let failed_ids = failures.iter().map(|f| f.id).collect();

        state.next_id += candidates.len() as u64;
        state.samples.extend(fresh);
        state.failures.extend(failures);
        // nothing new to learn from: keep the model and its pool
        if state.config.mode == Mode::Multi && !new_ids.is_empty() {
            let next = build_stage(&state.config, &state.samples, k as u64)?;
            rebin(&next, &mut state.samples)?;
            state.current = next;
        }
        let (table, estimate) = estimate_on(&state.current, &state.samples, state.config.n_confident)?;
        log::info!(
            "iteration {k}: P = {:.6e}, unbiased variance {:.6e}, {} evaluations",
            estimate.probability,
            estimate.unbiased_variance,
            state.samples.len()
        );
        state.iterations.push(IterationRecord {
            iteration: k,
            budget,
            allocation_table,
            allocation_p2,
            plan,
            new_ids,
            failed_ids,
            stage: state.current.clone(),
            table,
            estimate,
        });
        if let Some(dir) = self.run_dir {
            dir.save_iteration(state)?;
        }
        Ok(())
    }

    /// Spends every remaining configured budget.
    pub fn finish(&self, state: &mut RunState) -> Result<()> {
        while let Some(&budget) = state.remaining_budgets().first() {
            self.iterate(state, budget)?;
        }
        if let Some(dir) = self.run_dir {
            dir.save_report(&final_report(state)?)?;
        }
        Ok(())
    }

    /// Full campaign from a fresh configuration.
    pub fn run(&self, config: RunConfig) -> Result<RunState> {
        let mut state = self.preliminary(config)?;
        self.finish(&mut state)?;
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: u32,
    pub evaluations: usize,
    pub probability: f64,
    pub biased_variance: f64,
    pub unbiased_variance: f64,
    pub ci95: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub mode: Mode,
    pub critical_value: f64,
    pub evaluator: String,
    pub evaluations: usize,
    pub failures: usize,
    pub estimate: RareEventEstimate,
    /// `mc_equivalent / evaluations`.
    pub efficiency: Option<f64>,
    pub history: Vec<IterationSummary>,
}

pub fn final_report(state: &RunState) -> Result<FinalReport> {
    let last = state.iterations.last().ok_or_else(|| RunError::Config("no completed iteration to report".into()))?;
    let evaluator = match &state.config.evaluator {
        crate::config::EvaluatorConfig::Synthetic { family, .. } => format!("synthetic {}", family.name()),
        crate::config::EvaluatorConfig::External { command, .. } => format!("external {}", command.join(" ")),
    };
    let mut evaluations = state.samples.iter().filter(|s| s.iteration == 0).count();
    let history = state
        .iterations
        .iter()
        .map(|it| {
            evaluations += it.new_ids.len();
            IterationSummary {
                iteration: it.iteration,
                evaluations,
                probability: it.estimate.probability,
                biased_variance: it.estimate.biased_variance,
                unbiased_variance: it.estimate.unbiased_variance,
                ci95: it.estimate.ci95,
            }
        })
        .collect();
    Ok(FinalReport {
        mode: state.config.mode,
        critical_value: state.config.critical_value,
        evaluator,
        evaluations: state.evaluations(),
        failures: state.failures.len(),
        estimate: last.estimate.clone(),
        efficiency: last.estimate.efficiency(state.evaluations()),
        history,
    })
}

impl FinalReport {
    pub fn to_text(&self) -> String {
        let e = &self.estimate;
        let mut out = String::new();
        let mode = match self.mode {
            Mode::Single => "single-iteration",
            Mode::Multi => "multi-iteration",
        };
        out += &format!("P(J > {}) with {mode} stratified sampling\n", self.critical_value);
        out += &format!("evaluator            {}\n", self.evaluator);
        out += &format!("evaluations          {} ({} failed)\n", self.evaluations, self.failures);
        out += &format!("estimate             {:.6e}\n", e.probability);
        out += &format!("biased variance      {:.6e}\n", e.biased_variance);
        out += &format!("unbiased variance    {:.6e}\n", e.unbiased_variance);
        out += &format!("95% interval         ({:.6e}, {:.6e})\n", e.ci95.0, e.ci95.1);
        out += &format!("pool variance        {:.6e}\n", e.pool_variance);
        match (e.mc_equivalent, self.efficiency) {
            (Some(n), Some(r)) => out += &format!("naive MC equivalent  {n} samples ({r:.1}x)\n"),
            _ => out += "naive MC equivalent  undefined\n",
        }
        out += "\niteration  evaluations  estimate      unbiased variance\n";
        for h in &self.history {
            out += &format!(
                "{:>9}  {:>11}  {:.6e}  {:.6e}\n",
                h.iteration, h.evaluations, h.probability, h.unbiased_variance
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveMcResult {
    pub requested: usize,
    pub evaluated: usize,
    pub failures: usize,
    pub hits: usize,
    pub probability: f64,
    /// `p (1 - p) / n`.
    pub variance: f64,
}

/// Plain Monte Carlo with `n` expensive evaluations of uniform draws.
pub fn naive_monte_carlo(
    config: &RunConfig,
    evaluator: &dyn Evaluator,
    n: usize,
    seed: u64,
    parallelism: usize,
) -> Result<NaiveMcResult> {
    if n == 0 {
        return Err(RunError::Config("naive Monte Carlo needs at least one sample".into()));
    }
    let space = config.space()?;
    let params = space.sample_uniform(&mut substream(seed, Stream::NaiveMc, &[]), n);
    let requests: Vec<EvaluationRequest> =
        params.into_iter().enumerate().map(|(k, params)| EvaluationRequest { id: k as u64, params }).collect();
    let outcome = evaluate_batch(evaluator, &requests, parallelism);
    if outcome.failures.len() as f64 > MAX_FAILURE_SHARE * n as f64 {
        return Err(RunError::EvaluatorThreshold {
            stage: "naive Monte Carlo".into(),
            failed: outcome.failures.len(),
            total: n,
            first: outcome.failures[0].error.to_string(),
        });
    }
    let evaluated = outcome.results.len();
    let hits = outcome.results.iter().filter(|r| r.objective > config.critical_value).count();
    let probability = hits as f64 / evaluated as f64;
    Ok(NaiveMcResult {
        requested: n,
        evaluated,
        failures: outcome.failures.len(),
        hits,
        probability,
        variance: probability * (1.0 - probability) / evaluated as f64,
    })
}
