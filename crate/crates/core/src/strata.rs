//! Partition of the surrogate range into strata and the pool estimate of
//! each stratum's probability mass.
//!
//! Stratum 0 is `(-inf, edges[0])`, stratum `k` is `[edges[k-1], edges[k])`
//! and the last is `[edges[last], +inf)`. A value on an edge belongs to the
//! higher stratum.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::surrogate::SurrogateModel;

/// Default band half-width in units of sigma.
pub const DEFAULT_HALFWIDTH_SIGMAS: f64 = 10.0;

/// Pool draws per independently seeded block.
pub const POOL_BLOCK: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSet {
    edges: Vec<f64>,
    pub critical_value: f64,
    pub sigma: f64,
    pub inner_count: usize,
    pub halfwidth_sigmas: f64,
}

impl StratumSet {
    /// `inner_count` equal bins over `critical ± halfwidth_sigmas * sigma`
    /// plus the two unbounded tails.
    pub fn build(critical_value: f64, sigma: f64, inner_count: usize, halfwidth_sigmas: f64) -> Result<Self> {
        if !critical_value.is_finite() {
            return Err(Error::Domain(format!("critical value {critical_value} is not finite")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::DegenerateModel { sigma });
        }
        if inner_count == 0 {
            return Err(Error::Domain("inner stratum count must be at least 1".into()));
        }
        if !(halfwidth_sigmas > 0.0) || !halfwidth_sigmas.is_finite() {
            return Err(Error::Domain(format!("band half-width {halfwidth_sigmas} must be positive")));
        }
        let half = halfwidth_sigmas * sigma;
        let n = inner_count as f64;
        // symmetric construction keeps the centre edge exactly on the critical value
        let edges: Vec<f64> = (0..=inner_count).map(|k| critical_value + ((2 * k) as f64 - n) / n * half).collect();
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain(format!("band {critical_value} ± {half} too narrow for {inner_count} strata")));
        }
        Ok(StratumSet { edges, critical_value, sigma, inner_count, halfwidth_sigmas })
    }

    /// Fallback for a perfect surrogate: one split at the critical value.
    pub fn two_stratum(critical_value: f64) -> Self {
        StratumSet { edges: vec![critical_value], critical_value, sigma: 0.0, inner_count: 0, halfwidth_sigmas: 0.0 }
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Total number of strata, `inner_count + 2` for a band layout.
    #[inline]
    pub fn len(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_tail(&self, index: usize) -> bool {
        index == 0 || index + 1 == self.len()
    }

    pub fn is_band(&self) -> bool {
        self.inner_count > 0
    }

    /// `[lower, upper)` of stratum `index`, with infinite tails.
    pub fn bounds(&self, index: usize) -> (f64, f64) {
        let lo = if index == 0 { f64::NEG_INFINITY } else { self.edges[index - 1] };
        let hi = self.edges.get(index).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }

    /// Arithmetic centre of a finite stratum.
    pub fn midpoint(&self, index: usize) -> Option<f64> {
        let (lo, hi) = self.bounds(index);
        (lo.is_finite() && hi.is_finite()).then_some(0.5 * (lo + hi))
    }

    pub fn bin(&self, j_tilde: f64) -> Result<usize> {
        if j_tilde.is_nan() {
            return Err(Error::Domain("cannot bin NaN".into()));
        }
        Ok(self.bin_unchecked(j_tilde))
    }

    #[inline]
    pub(crate) fn bin_unchecked(&self, j_tilde: f64) -> usize {
        self.edges.partition_point(|&e| e <= j_tilde)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumWeights {
    pub p1: Vec<f64>,
    pub counts: Vec<u64>,
    pub pool_size: u64,
    /// Binomial variance of each `p1`, treated as negligible downstream.
    pub variance: Vec<f64>,
}

impl StratumWeights {
    pub fn from_counts(counts: Vec<u64>, pool_size: u64) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if pool_size == 0 || total != pool_size {
            return Err(Error::Contract(format!("pool counts sum to {total}, pool size is {pool_size}")));
        }
        let n = pool_size as f64;
        let p1: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let variance = p1.iter().map(|&p| p * (1.0 - p) / n).collect();
        Ok(StratumWeights { p1, counts, pool_size, variance })
    }
}

/// Number of pool blocks for `pool_size` draws.
pub fn pool_blocks(pool_size: u64) -> u64 {
    pool_size.div_ceil(POOL_BLOCK)
}

/// Per-stratum hit counts for one block of the surrogate pool. Block `b`
/// always uses the same substream, so blocks can be counted in any order or
/// on any thread and summed.
pub fn count_pool_block(
    strata: &StratumSet,
    model: &SurrogateModel,
    pool_size: u64,
    seed: u64,
    iteration: u64,
    block: u64,
) -> Vec<u64> {
    let mut counts = vec![0u64; strata.len()];
    let start = block * POOL_BLOCK;
    let len = pool_size.saturating_sub(start).min(POOL_BLOCK);
    let mut rng = substream(seed, Stream::Pool, &[iteration, block]);
    let mut u = vec![0.0; model.dim()];
    for _ in 0..len {
        model.space.draw_unit(&mut rng, &mut u);
        counts[strata.bin_unchecked(model.predict_unit(&u))] += 1;
    }
    counts
}

/// Streams `pool_size` uniform draws through the surrogate and bins them.
/// Memory use is independent of the pool size.
pub fn estimate_weights(
    strata: &StratumSet,
    model: &SurrogateModel,
    pool_size: u64,
    seed: u64,
    iteration: u64,
) -> Result<StratumWeights> {
    if pool_size == 0 {
        return Err(Error::Domain("pool size must be at least 1".into()));
    }
    let mut counts = vec![0u64; strata.len()];
    for block in 0..pool_blocks(pool_size) {
        let c = count_pool_block(strata, model, pool_size, seed, iteration, block);
        counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    }
    StratumWeights::from_counts(counts, pool_size)
}
