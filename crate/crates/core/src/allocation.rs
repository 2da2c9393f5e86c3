//! Variance-minimizing split of an evaluation budget across strata and the
//! search for concrete parameter vectors inside each stratum.
//!
//! With stratum mass `p1` and conditional probability `p2`, the stratified
//! estimator's variance `sum p1^2 p2 (1 - p2) / N_i` under `sum N_i = N` is
//! minimized by `N_i ∝ p1 sqrt(p2 (1 - p2))`. Integer counts come from
//! largest-remainder apportionment with a floor of one evaluation for every
//! stratum that contributes variance, whenever the budget covers them all.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::space::ParameterVector;
use crate::strata::StratumSet;
use crate::surrogate::SurrogateModel;

/// Default rejected draws tolerated per requested candidate.
pub const DEFAULT_CANDIDATE_CAP: u64 = 10_000_000;

/// Integer rounding of the proportional allocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// [`apportion`]: plain largest remainder.
    #[default]
    Hamilton,
    /// [`allocate`]: one evaluation per positively weighted stratum first.
    Floored,
}

impl Rounding {
    pub fn apply(self, weights: &[f64], budget: usize) -> Result<Vec<usize>> {
        match self {
            Rounding::Floored => allocate(weights, budget),
            Rounding::Hamilton => apportion(weights, budget),
        }
    }
}

/// `p1 * sqrt(p2 (1 - p2))` per stratum.
pub fn optimal_weights(p1: &[f64], p2: &[f64]) -> Result<Vec<f64>> {
    if p1.len() != p2.len() {
        return Err(Error::Contract(format!("{} masses but {} conditionals", p1.len(), p2.len())));
    }
    p1.iter()
        .zip(p2)
        .map(|(&a, &b)| {
            if !((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)) {
                return Err(Error::Domain(format!("probabilities ({a}, {b}) outside [0, 1]")));
            }
            Ok(a * libm::sqrt(b * (1.0 - b)))
        })
        .collect()
}

/// Stratified-estimator variance for integer counts; infinite when a
/// variance-carrying stratum has no evaluations.
pub fn variance_objective(p1: &[f64], p2: &[f64], counts: &[usize]) -> f64 {
    p1.iter()
        .zip(p2)
        .zip(counts)
        .map(|((&a, &b), &n)| {
            let v = a * a * b * (1.0 - b);
            match (v > 0.0, n) {
                (false, _) => 0.0,
                (true, 0) => f64::INFINITY,
                (true, n) => v / n as f64,
            }
        })
        .sum()
}

fn check_weights(weights: &[f64]) -> Result<f64> {
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Domain(format!("allocation weight {w} is not a finite non-negative number")));
    }
    Ok(weights.iter().sum())
}

fn zero_weight_error(budget: usize) -> Error {
    Error::Allocation(format!(
        "all stratum weights are zero but {budget} evaluations were requested; \
         widen the strata or allocate with hybrid conditional probabilities"
    ))
}

/// Plain largest-remainder apportionment of `budget` proportional to
/// `weights`. Remainder ties go to the larger weight, then the lower index.
pub fn apportion(weights: &[f64], budget: usize) -> Result<Vec<usize>> {
    let total = check_weights(weights)?;
    if budget == 0 {
        return Ok(vec![0; weights.len()]);
    }
    if !(total > 0.0) {
        return Err(zero_weight_error(budget));
    }
    let quotas: Vec<f64> = weights.iter().map(|w| budget as f64 * (w / total)).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let given: usize = seats.iter().sum();
    // floating error can push the floors a seat over in pathological inputs
    if given > budget {
        return Err(Error::Allocation(format!("quota floors exceed budget {budget}")));
    }
    let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - seats[a] as f64;
        let rb = quotas[b] - seats[b] as f64;
        rb.total_cmp(&ra).then(weights[b].total_cmp(&weights[a])).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(budget - given) {
        seats[i] += 1;
    }
    Ok(seats)
}

/// Integer allocation of `budget` proportional to `weights`.
///
/// When the budget covers every positive-weight stratum, each of them is
/// guaranteed one evaluation: strata whose quota falls below one are pinned
/// at one and the rest is apportioned among the others, repeating until no
/// quota is below one. Otherwise this is plain [`apportion`].
pub fn allocate(weights: &[f64], budget: usize) -> Result<Vec<usize>> {
    check_weights(weights)?;
    let positive: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    if budget == 0 || positive.is_empty() || budget < positive.len() {
        return apportion(weights, budget);
    }
    let mut pinned = vec![false; weights.len()];
    loop {
        let free: Vec<usize> = positive.iter().copied().filter(|&i| !pinned[i]).collect();
        let n_pinned = positive.len() - free.len();
        let remaining = budget - n_pinned;
        let free_total: f64 = free.iter().map(|&i| weights[i]).sum();
        let low: Vec<usize> =
            free.iter().copied().filter(|&i| remaining as f64 * (weights[i] / free_total) < 1.0).collect();
        if low.is_empty() || free.is_empty() {
            let sub: Vec<f64> = free.iter().map(|&i| weights[i]).collect();
            let seats = if sub.is_empty() { Vec::new() } else { apportion(&sub, remaining)? };
            let mut out = vec![0; weights.len()];
            for &i in &positive {
                if pinned[i] {
                    out[i] = 1;
                }
            }
            for (&i, s) in free.iter().zip(seats) {
                out[i] = s;
            }
            return Ok(out);
        }
        for i in low {
            pinned[i] = true;
        }
    }
}

/// New evaluations per stratum given the ideal totals `target` and the
/// `existing` evaluations, summing to exactly `budget`.
///
/// Starts from `max(0, target - existing)`. If that misses the budget, the
/// budget plus the existing counts of the non-saturated strata (positive
/// weight, `existing < target`) is re-allocated over those strata by weight;
/// strata whose new total would fall below what they already hold are
/// dropped and the re-allocation repeats.
pub fn subtract_existing(target: &[usize], existing: &[usize], weights: &[f64], budget: usize) -> Result<Vec<usize>> {
    subtract_existing_with(target, existing, weights, budget, Rounding::Floored)
}

/// [`subtract_existing`] with an explicit rounding for the re-allocation.
pub fn subtract_existing_with(
    target: &[usize],
    existing: &[usize],
    weights: &[f64],
    budget: usize,
    rounding: Rounding,
) -> Result<Vec<usize>> {
    let n = target.len();
    if existing.len() != n || weights.len() != n {
        return Err(Error::Contract("allocation inputs differ in length".into()));
    }
    let direct: Vec<usize> = target.iter().zip(existing).map(|(&t, &e)| t.saturating_sub(e)).collect();
    if direct.iter().sum::<usize>() == budget {
        return Ok(direct);
    }
    let mut open: Vec<bool> = (0..n).map(|i| weights[i] > 0.0 && existing[i] < target[i]).collect();
    loop {
        if !open.iter().any(|&o| o) {
            return Err(Error::Allocation(format!(
                "{budget} evaluations requested but every positively weighted stratum is saturated"
            )));
        }
        let sub: Vec<f64> = (0..n).map(|i| if open[i] { weights[i] } else { 0.0 }).collect();
        let held: usize = (0..n).filter(|&i| open[i]).map(|i| existing[i]).sum();
        let totals = rounding.apply(&sub, budget + held)?;
        let short: Vec<usize> = (0..n).filter(|&i| open[i] && totals[i] < existing[i]).collect();
        if short.is_empty() {
            return Ok((0..n).map(|i| if open[i] { totals[i] - existing[i] } else { 0 }).collect());
        }
        for i in short {
            open[i] = false;
        }
    }
}

/// Allocation for one adaptive iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub weights: Vec<f64>,
    /// Ideal total evaluations per stratum, existing ones included.
    pub target: Vec<usize>,
    pub existing: Vec<usize>,
    pub additional: Vec<usize>,
}

impl AllocationPlan {
    /// Targets are sized for `budget` plus the evaluations already held in
    /// positively weighted strata, then reduced by what exists.
    pub fn compute(p1: &[f64], p2: &[f64], existing: &[usize], budget: usize) -> Result<Self> {
        Self::from_weights(optimal_weights(p1, p2)?, existing, budget, Rounding::Floored)
    }

    pub fn from_weights(weights: Vec<f64>, existing: &[usize], budget: usize, rounding: Rounding) -> Result<Self> {
        if existing.len() != weights.len() {
            return Err(Error::Contract("existing counts differ in length".into()));
        }
        let held: usize = existing.iter().zip(&weights).filter(|(_, w)| **w > 0.0).map(|(e, _)| *e).sum();
        let target = if budget == 0 { vec![0; weights.len()] } else { rounding.apply(&weights, budget + held)? };
        let additional = subtract_existing_with(&target, existing, &weights, budget, rounding)?;
        Ok(AllocationPlan { weights, target, existing: existing.to_vec(), additional })
    }

    pub fn total(&self) -> usize {
        self.additional.iter().sum()
    }
}

/// A parameter vector chosen for a stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub stratum: usize,
    pub params: ParameterVector,
    pub j_tilde: f64,
    /// Position in the search stream.
    pub draw: u64,
}

/// Draws uniform points, bins them by surrogate value and keeps the first
/// `additional[i]` hits of each stratum. Output is sorted by stratum, then
/// draw index. A stratum that stays short after `cap * additional[i]`
/// draws that missed it is reported as unfillable; `p1` only enriches that
/// error.
pub fn select_candidates(
    strata: &StratumSet,
    model: &SurrogateModel,
    additional: &[usize],
    seed: u64,
    iteration: u64,
    cap: u64,
    p1: Option<&[f64]>,
) -> Result<Vec<Candidate>> {
    if additional.len() != strata.len() {
        return Err(Error::Contract(format!("{} quotas for {} strata", additional.len(), strata.len())));
    }
    let mut remaining: Vec<usize> = additional.to_vec();
    let mut found = vec![0usize; strata.len()];
    let mut open: usize = remaining.iter().filter(|&&r| r > 0).count();
    let limit =
        |i: usize, found: &[usize]| -> u64 { cap.saturating_mul(additional[i] as u64).saturating_add(found[i] as u64) };
    let next_limit = |remaining: &[usize], found: &[usize]| -> u64 {
        (0..remaining.len()).filter(|&i| remaining[i] > 0).map(|i| limit(i, found)).min().unwrap_or(u64::MAX)
    };
    let mut deadline = next_limit(&remaining, &found);

    let mut rng = substream(seed, Stream::CandidateSearch, &[iteration]);
    let mut u = vec![0.0; model.dim()];
    let mut out = Vec::with_capacity(additional.iter().sum());
    let mut draw: u64 = 0;
    while open > 0 {
        if draw >= deadline {
            let i = (0..remaining.len()).find(|&i| remaining[i] > 0 && draw >= limit(i, &found)).unwrap_or(0);
            return Err(Error::UnfillableStratum {
                stratum: i,
                requested: additional[i],
                found: found[i],
                draws: draw,
                weight: p1.and_then(|p| p.get(i).copied()),
            });
        }
        model.space.draw_unit(&mut rng, &mut u);
        let params = model.space.denormalize_unchecked(&u);
        let j_tilde = model.predict_unit(&model.space.normalize_unchecked(&params));
        let i = strata.bin_unchecked(j_tilde);
        if remaining[i] > 0 {
            remaining[i] -= 1;
            found[i] += 1;
            if remaining[i] == 0 {
                open -= 1;
            }
            out.push(Candidate { stratum: i, params, j_tilde, draw });
            deadline = next_limit(&remaining, &found);
        }
        draw += 1;
    }
    out.sort_by_key(|c| (c.stratum, c.draw));
    Ok(out)
}
