//! Stratified estimate of `P(J > C)`, its variances, the two-sigma interval
//! and the naive Monte Carlo sample count with the same variance.
//!
//! Stratum masses are treated as constants; their pool error is reported
//! separately and never enters the variance.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of `sum p1` from one.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

fn check_inputs(p1: &[f64], p2: &[f64], counts: Option<&[u32]>) -> Result<()> {
    if p1.len() != p2.len() || counts.is_some_and(|c| c.len() != p1.len()) {
        return Err(Error::Contract("estimator inputs differ in length".into()));
    }
    if let Some(p) = p1.iter().chain(p2).find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// `sum p1_i p2_i`.
pub fn estimate(p1: &[f64], p2: &[f64]) -> Result<f64> {
    check_inputs(p1, p2, None)?;
    let sum: f64 = p1.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::InconsistentWeights { sum });
    }
    Ok(p1.iter().zip(p2).map(|(a, b)| a * b).sum::<f64>().clamp(0.0, 1.0))
}

/// `sum p1_i^2 p2_i (1 - p2_i) / N_i`. Strata with `p2` in {0, 1} add
/// nothing whatever their count.
pub fn biased_variance(p1: &[f64], p2: &[f64], counts: &[u32]) -> Result<f64> {
    check_inputs(p1, p2, Some(counts))?;
    let mut total = 0.0;
    for (i, ((&a, &b), &n)) in p1.iter().zip(p2).zip(counts).enumerate() {
        let v = b * (1.0 - b);
        if v == 0.0 {
            continue;
        }
        if n == 0 {
            return Err(Error::Contract(format!("stratum {i} has p2 = {b} but no evaluations")));
        }
        total += a * a * v / n as f64;
    }
    Ok(total)
}

/// `sum p1_i^2 p2_i (1 - p2_i) / (N_i - 1)` over strata with at least two
/// evaluations; the rest are skipped.
pub fn unbiased_variance(p1: &[f64], p2: &[f64], counts: &[u32]) -> Result<f64> {
    check_inputs(p1, p2, Some(counts))?;
    Ok(p1
        .iter()
        .zip(p2)
        .zip(counts)
        .filter(|(_, &n)| n >= 2)
        .map(|((&a, &b), &n)| a * a * b * (1.0 - b) / (n - 1) as f64)
        .sum())
}

/// `(mu - 2s, mu + 2s)`.
pub fn confidence_interval(probability: f64, variance: f64) -> Result<(f64, f64)> {
    if !(variance >= 0.0) {
        return Err(Error::Domain(format!("variance {variance} is negative")));
    }
    let s = libm::sqrt(variance);
    Ok((probability - 2.0 * s, probability + 2.0 * s))
}

/// Naive Monte Carlo samples needed to reach `target_variance`:
/// `ceil(P (1 - P) / Var)`.
pub fn naive_mc_equivalent(probability: f64, target_variance: f64) -> Result<u64> {
    if !(probability > 0.0 && probability < 1.0) {
        return Err(Error::Domain(format!("probability {probability} must lie strictly in (0, 1)")));
    }
    if !(target_variance > 0.0) || !target_variance.is_finite() {
        return Err(Error::Domain(format!("target variance {target_variance} must be positive")));
    }
    let exact = probability * (1.0 - probability) / target_variance;
    // values within rounding of an integer are not bumped to the next one
    let nearest = libm::round(exact);
    let n = if (exact - nearest).abs() <= 1e-9 * nearest { nearest } else { libm::ceil(exact) };
    if n >= u64::MAX as f64 {
        return Err(Error::Domain("naive Monte Carlo sample count overflows".into()));
    }
    Ok(n as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumContribution {
    pub p1: f64,
    pub p2: f64,
    pub count: u32,
    /// `p1 * p2`.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareEventEstimate {
    pub probability: f64,
    pub biased_variance: f64,
    pub unbiased_variance: f64,
    pub ci95: (f64, f64),
    /// Naive MC samples matching the biased variance; absent when the
    /// estimate or its variance is degenerate.
    pub mc_equivalent: Option<u64>,
    /// `sum p2_i^2 Var[p1_i]`, the pool error left out of both variances.
    pub pool_variance: f64,
    pub per_stratum: Vec<StratumContribution>,
}

impl RareEventEstimate {
    pub fn compute(p1: &[f64], p2: &[f64], counts: &[u32], p1_variance: Option<&[f64]>) -> Result<Self> {
        let probability = estimate(p1, p2)?;
        let biased = biased_variance(p1, p2, counts)?;
        let unbiased = unbiased_variance(p1, p2, counts)?;
        let ci95 = confidence_interval(probability, unbiased)?;
        let mc_equivalent = naive_mc_equivalent(probability, biased).ok();
        let pool_variance = p1_variance.map(|v| v.iter().zip(p2).map(|(v, b)| b * b * v).sum()).unwrap_or(0.0);
        let per_stratum = p1
            .iter()
            .zip(p2)
            .zip(counts)
            .map(|((&a, &b), &n)| StratumContribution { p1: a, p2: b, count: n, contribution: a * b })
            .collect();
        Ok(RareEventEstimate {
            probability,
            biased_variance: biased,
            unbiased_variance: unbiased,
            ci95,
            mc_equivalent,
            pool_variance,
            per_stratum,
        })
    }

    /// Naive-MC-equivalent samples per expensive evaluation actually spent.
    pub fn efficiency(&self, evaluations: usize) -> Option<f64> {
        self.mc_equivalent.filter(|_| evaluations > 0).map(|n| n as f64 / evaluations as f64)
    }
}
