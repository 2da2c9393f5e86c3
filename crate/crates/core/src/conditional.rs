//! Conditional exceedance probabilities per stratum: Laplace-model
//! prediction, empirical observation and the confidence-weighted mixture.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::SampleRecord;
use crate::strata::StratumSet;

pub const DEFAULT_N_CONFIDENT: u32 = 10;

/// Laplace law of the surrogate residual `J - J~`, zero mean and variance
/// `sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceResidualModel {
    pub mu: f64,
    pub b: f64,
}

impl LaplaceResidualModel {
    pub fn from_sigma(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("Laplace scale needs sigma > 0, got {sigma}")));
        }
        Ok(LaplaceResidualModel { mu: 0.0, b: sigma / core::f64::consts::SQRT_2 })
    }

    /// `P(J~ + eps > critical)` for a surrogate value `a`.
    pub fn exceedance(&self, a: f64, critical_value: f64) -> f64 {
        let d = a - self.mu - critical_value;
        if d < 0.0 {
            0.5 * libm::exp(d / self.b)
        } else if d > 0.0 {
            1.0 - 0.5 * libm::exp(-d / self.b)
        } else {
            0.5
        }
    }
}

/// Probability that the objective exceeds `critical_value` when the
/// surrogate reads `a`, under a Laplace residual with RMS `sigma`.
pub fn laplace_exceedance(a: f64, critical_value: f64, sigma: f64) -> Result<f64> {
    Ok(LaplaceResidualModel::from_sigma(sigma)?.exceedance(a, critical_value))
}

/// Predicted `p2` per stratum: Laplace exceedance at each finite stratum's
/// midpoint, 0 for the lower tail and 1 for the upper tail.
pub fn predict_p2(strata: &StratumSet) -> Vec<f64> {
    let laplace = LaplaceResidualModel::from_sigma(strata.sigma).ok();
    (0..strata.len())
        .map(|i| match (strata.midpoint(i), laplace) {
            (Some(a), Some(l)) => l.exceedance(a, strata.critical_value),
            _ if i == 0 => 0.0,
            _ => 1.0,
        })
        .collect()
}

/// Per-stratum evaluated counts and exceedances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub counts: Vec<u32>,
    pub exceed_counts: Vec<u32>,
    pub p2_obs: Vec<Option<f64>>,
}

/// Tallies `(j_tilde, j_true)` pairs by stratum.
pub fn observe_pairs<I>(strata: &StratumSet, pairs: I, critical_value: f64) -> Result<Observations>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut counts = vec![0u32; strata.len()];
    let mut exceed_counts = vec![0u32; strata.len()];
    for (j_tilde, j_true) in pairs {
        let i = strata.bin(j_tilde)?;
        counts[i] += 1;
        if j_true > critical_value {
            exceed_counts[i] += 1;
        }
    }
    let p2_obs = counts.iter().zip(&exceed_counts).map(|(&n, &k)| (n > 0).then(|| k as f64 / n as f64)).collect();
    Ok(Observations { counts, exceed_counts, p2_obs })
}

/// Tallies evaluated samples. Each must carry both `j_tilde` (under the
/// model that built `strata`) and `j_true`.
pub fn observe_p2(strata: &StratumSet, samples: &[SampleRecord], critical_value: f64) -> Result<Observations> {
    let pairs = samples
        .iter()
        .map(|s| match (s.j_tilde, s.j_true) {
            (Some(t), Some(j)) => Ok((t, j)),
            (None, _) => Err(Error::Contract(format!("sample {} has no surrogate value", s.id))),
            (_, None) => Err(Error::Contract(format!("sample {} has no objective value", s.id))),
        })
        .collect::<Result<Vec<_>>>()?;
    observe_pairs(strata, pairs, critical_value)
}

/// `r p2_obs + (1 - r) p2_pred` with `r = min(1, count / n_confident)`.
pub fn mix_p2(p2_obs: &[Option<f64>], p2_pred: &[f64], counts: &[u32], n_confident: u32) -> Result<Vec<f64>> {
    if n_confident == 0 {
        return Err(Error::Domain("n_confident must be at least 1".into()));
    }
    if p2_obs.len() != p2_pred.len() || counts.len() != p2_pred.len() {
        return Err(Error::Contract("mixture inputs differ in length".into()));
    }
    Ok(p2_obs
        .iter()
        .zip(p2_pred)
        .zip(counts)
        .map(|((obs, &pred), &n)| match obs {
            Some(o) if n > 0 => {
                let r = (n as f64 / n_confident as f64).min(1.0);
                if r >= 1.0 {
                    *o
                } else {
                    r * o + (1.0 - r) * pred
                }
            }
            _ => pred,
        })
        .collect())
}

/// Observed `p2` with hard extrapolation for strata without samples: 0
/// below the lowest sampled stratum, 1 above the highest, and for interior
/// gaps 0 or 1 depending on which side of the critical value the stratum
/// centre lies.
pub fn extrapolate_p2(strata: &StratumSet, obs: &Observations) -> Vec<f64> {
    let lowest = obs.counts.iter().position(|&n| n > 0);
    let highest = obs.counts.iter().rposition(|&n| n > 0);
    (0..strata.len())
        .map(|i| {
            if let Some(p) = obs.p2_obs[i] {
                return p;
            }
            match (lowest, highest) {
                (Some(lo), _) if i < lo => 0.0,
                (_, Some(hi)) if i > hi => 1.0,
                _ => {
                    let centre = strata.midpoint(i).unwrap_or(if i == 0 { f64::NEG_INFINITY } else { f64::INFINITY });
                    if centre < strata.critical_value {
                        0.0
                    } else {
                        1.0
                    }
                }
            }
        })
        .collect()
}

/// Biased (`/N`) and unbiased (`/(N-1)`) binomial variance of each `p2`.
/// Biased is 0 for empty strata; unbiased is absent below two samples.
pub fn p2_variance(p2: &[f64], counts: &[u32]) -> (Vec<f64>, Vec<Option<f64>>) {
    p2.iter()
        .zip(counts)
        .map(|(&p, &n)| {
            let v = p * (1.0 - p);
            let biased = if n >= 1 { v / n as f64 } else { 0.0 };
            let unbiased = (n >= 2).then(|| v / (n - 1) as f64);
            (biased, unbiased)
        })
        .unzip()
}

/// Snapshot of all `p2` sources for one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTable {
    pub p2_pred: Vec<f64>,
    pub p2_obs: Vec<Option<f64>>,
    pub counts: Vec<u32>,
    pub exceed_counts: Vec<u32>,
    pub p2_mix: Vec<f64>,
    /// Observations with hard 0/1 fill-in for empty strata.
    pub p2_extrapolated: Vec<f64>,
    pub n_confident: u32,
}

impl ConditionalTable {
    pub fn compute(strata: &StratumSet, samples: &[SampleRecord], n_confident: u32) -> Result<Self> {
        let evaluated: Vec<SampleRecord> = samples.iter().filter(|s| s.is_evaluated()).cloned().collect();
        let obs = observe_p2(strata, &evaluated, strata.critical_value)?;
        let p2_pred = predict_p2(strata);
        let p2_mix = mix_p2(&obs.p2_obs, &p2_pred, &obs.counts, n_confident)?;
        let p2_extrapolated = extrapolate_p2(strata, &obs);
        Ok(ConditionalTable {
            p2_pred,
            p2_obs: obs.p2_obs,
            counts: obs.counts,
            exceed_counts: obs.exceed_counts,
            p2_mix,
            p2_extrapolated,
            n_confident,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ParameterVector;

    #[test]
    fn laplace_point_values() {
        let (c, s) = (0.9, 0.01);
        let b = s / core::f64::consts::SQRT_2;
        assert_eq!(laplace_exceedance(c, c, s).unwrap(), 0.5);
        let e1 = 0.5 * libm::exp(-1.0);
        assert!((laplace_exceedance(c - b, c, s).unwrap() - e1).abs() < 1e-12);
        assert!((laplace_exceedance(c + b, c, s).unwrap() - (1.0 - e1)).abs() < 1e-12);
        assert!((e1 - 0.1839397).abs() < 1e-7);
        assert!(laplace_exceedance(c, c, 0.0).is_err());
        assert!(laplace_exceedance(c, c, -1.0).is_err());
    }

    #[test]
    fn predicted_p2_layouts() {
        let s = StratumSet::build(0.9, 0.01, 100, 10.0).unwrap();
        let p = predict_p2(&s);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[101], 1.0);
        assert!(p.windows(2).all(|w| w[0] <= w[1]));
        // first inner midpoint sits 9.9 sigma below the critical value
        let expected = 0.5 * libm::exp(-(10.0 * 0.01 - 0.001) / (0.01 / core::f64::consts::SQRT_2));
        assert!((p[1] - expected).abs() < 1e-15);
        assert!((p[1] - 4.155e-7).abs() < 0.001e-7, "{}", p[1]);

        let one = StratumSet::build(0.9, 0.01, 1, 10.0).unwrap();
        assert_eq!(predict_p2(&one), vec![0.0, 0.5, 1.0]);
        assert_eq!(predict_p2(&StratumSet::two_stratum(0.9)), vec![0.0, 1.0]);
    }

    #[test]
    fn observation_counts() {
        let s = StratumSet::build(0.5, 0.05, 1, 10.0).unwrap();
        let o = observe_pairs(&s, [(0.5, 0.7), (0.5, 0.2), (0.6, 0.4), (0.4, 0.1)], 0.5).unwrap();
        assert_eq!(o.counts, vec![0, 4, 0]);
        assert_eq!(o.exceed_counts, vec![0, 1, 0]);
        assert_eq!(o.p2_obs, vec![None, Some(0.25), None]);

        let none = observe_pairs(&s, core::iter::empty(), 0.5).unwrap();
        assert!(none.p2_obs.iter().all(Option::is_none));
        assert!(none.counts.iter().all(|&n| n == 0));
    }

    #[test]
    fn unevaluated_sample_is_contract_error() {
        let s = StratumSet::build(0.5, 0.05, 1, 10.0).unwrap();
        let mut rec = SampleRecord::new(1, ParameterVector::from_values(vec![0.5]), 0);
        rec.j_tilde = Some(0.5);
        assert!(matches!(observe_p2(&s, &[rec], 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn mixture_cases() {
        let m = mix_p2(&[None, Some(0.7), Some(0.4), Some(0.9)], &[0.2, 0.1, 0.2, 0.3], &[0, 10, 5, 25], 10).unwrap();
        assert_eq!(m[0], 0.2);
        assert_eq!(m[1], 0.7);
        assert!((m[2] - 0.3).abs() < 1e-15);
        assert_eq!(m[3], 0.9);
        assert!(mix_p2(&[None], &[0.2], &[0], 0).is_err());
    }

    #[test]
    fn variance_cases() {
        let (b, u) = p2_variance(&[0.0, 1.0, 0.5, 0.3, 0.3], &[4, 4, 2, 1, 0]);
        assert_eq!(&b[..3], &[0.0, 0.0, 0.125]);
        assert_eq!(&u[..3], &[Some(0.0), Some(0.0), Some(0.25)]);
        assert!((b[3] - 0.21).abs() < 1e-15);
        assert_eq!(u[3], None);
        assert_eq!((b[4], u[4]), (0.0, None));
    }

    #[test]
    fn extrapolation_fills_outside_sampled_range() {
        let s = StratumSet::build(0.5, 0.05, 10, 10.0).unwrap();
        let mut obs = observe_pairs(&s, [(0.45, 0.4), (0.78, 0.6), (0.72, 0.4)], 0.5).unwrap();
        let p = extrapolate_p2(&s, &obs);
        assert_eq!(&p[..6], &[0.0; 6]);
        // interior gaps centred above the critical value
        assert_eq!((p[6], p[7]), (1.0, 1.0));
        assert_eq!(p[8], 0.5);
        assert_eq!(&p[9..], &[1.0; 3]);
        obs.counts.iter_mut().for_each(|n| *n = 0);
        obs.p2_obs.iter_mut().for_each(|p| *p = None);
        let p = extrapolate_p2(&s, &obs);
        assert_eq!(p[0], 0.0);
        assert_eq!(p[5], 0.0);
        assert_eq!(p[6], 1.0);
    }
}
