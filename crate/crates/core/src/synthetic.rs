//! Cheap closed-form stand-ins for the expensive objective and the
//! brute-force exceedance oracle built on them.
//!
//! With `u` the normalized coordinates of (aspect ratio, sweep, dihedral,
//! alpha, beta, Mach):
//!
//! ```text
//! J = 0.12 + 0.55 u_alpha + 0.15 u_ar - 0.06 u_sweep + 0.03 u_dihedral
//!          + 0.04 u_mach - 0.02 u_beta + 0.10 u_alpha u_ar + 0.05 u_alpha^2
//!          + noise_scale * eps(w)
//! ```
//!
//! The linear family drops the two quadratic terms. `eps` is uniform on
//! `[-1, 1]`, derived by integer hashing of the seed and the coordinate bit
//! patterns, so a value never depends on evaluation order or platform.

use alloc::format;
use alloc::string::String;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix, splitmix64, substream, unit_from_bits, Stream};
use crate::space::ParameterSpace;

/// Oracle draws per independently seeded block.
pub const ORACLE_BLOCK: u64 = 1 << 16;

/// Critical value at which the default quadratic objective exceeds with
/// probability about 1.9e-3.
pub const CALIBRATED_CRITICAL_VALUE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticFamily {
    /// Linear terms plus the alpha-aspect-ratio interaction and alpha^2.
    Quadratic,
    /// Linear terms only; exactly representable by the surrogate.
    Linear,
    /// The quadratic form with a large default noise scale.
    Noisy,
}

impl SyntheticFamily {
    pub fn default_noise_scale(self) -> f64 {
        match self {
            SyntheticFamily::Quadratic => 0.01,
            SyntheticFamily::Linear => 0.0,
            SyntheticFamily::Noisy => 0.05,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SyntheticFamily::Quadratic => "quadratic",
            SyntheticFamily::Linear => "linear",
            SyntheticFamily::Noisy => "noisy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObjectiveSpec {
    pub kind: SyntheticFamily,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticObjectiveSpec {
    pub fn new(kind: SyntheticFamily, seed: u64) -> Self {
        SyntheticObjectiveSpec { kind, noise_scale: kind.default_noise_scale(), seed }
    }
}

/// A synthetic objective bound to a 6-D parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObjective {
    spec: SyntheticObjectiveSpec,
    space: ParameterSpace,
}

impl SyntheticObjective {
    pub fn new(spec: SyntheticObjectiveSpec, space: ParameterSpace) -> Result<Self> {
        if space.dim() != 6 {
            return Err(Error::Domain(format!(
                "synthetic objectives need the 6 wing dimensions, space has {}",
                space.dim()
            )));
        }
        if !(spec.noise_scale >= 0.0) || !spec.noise_scale.is_finite() {
            return Err(Error::Domain(format!("noise scale {} must be non-negative", spec.noise_scale)));
        }
        Ok(SyntheticObjective { spec, space })
    }

    pub fn spec(&self) -> &SyntheticObjectiveSpec {
        &self.spec
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    /// Objective at `w` in natural units.
    pub fn evaluate(&self, w: &[f64]) -> Result<f64> {
        let u = self.space.normalize(w)?;
        let base = closed_form(self.spec.kind, &u);
        if self.spec.noise_scale == 0.0 {
            return Ok(base);
        }
        Ok(base + self.spec.noise_scale * pseudo_noise(self.spec.seed, w))
    }

    /// Objective for an unchecked natural-unit point; used by the oracle.
    fn evaluate_in_box(&self, w: &[f64]) -> f64 {
        let u = self.space.normalize_unchecked(w);
        let base = closed_form(self.spec.kind, &u);
        if self.spec.noise_scale == 0.0 {
            base
        } else {
            base + self.spec.noise_scale * pseudo_noise(self.spec.seed, w)
        }
    }

    pub fn describe(&self) -> String {
        format!("synthetic {} (noise {}, seed {})", self.spec.kind.name(), self.spec.noise_scale, self.spec.seed)
    }
}

fn closed_form(kind: SyntheticFamily, u: &[f64]) -> f64 {
    let (ar, sweep, dihedral, alpha, beta, mach) = (u[0], u[1], u[2], u[3], u[4], u[5]);
    let linear = 0.12 + 0.55 * alpha + 0.15 * ar - 0.06 * sweep + 0.03 * dihedral + 0.04 * mach - 0.02 * beta;
    match kind {
        SyntheticFamily::Linear => linear,
        SyntheticFamily::Quadratic | SyntheticFamily::Noisy => linear + 0.10 * alpha * ar + 0.05 * alpha * alpha,
    }
}

const NOISE_TAG: u64 = 0x6e6f_6973_6500_0004;

/// Uniform pseudo-noise on `[-1, 1]` keyed by `seed` and the exact bits of `w`.
pub fn pseudo_noise(seed: u64, w: &[f64]) -> f64 {
    let mut acc = mix(seed, NOISE_TAG);
    for v in w {
        acc = mix(acc, v.to_bits());
    }
    2.0 * unit_from_bits(splitmix64(&mut acc)) - 1.0
}

/// Exceedances of `critical_value` in block `block` of an `n`-draw oracle run.
pub fn oracle_block(objective: &SyntheticObjective, critical_value: f64, n: u64, seed: u64, block: u64) -> u64 {
    let start = block * ORACLE_BLOCK;
    let len = n.saturating_sub(start).min(ORACLE_BLOCK);
    let mut rng = substream(seed, Stream::Oracle, &[block]);
    let dim = objective.space.dim();
    let mut u = [0.0f64; 6];
    let mut hits = 0;
    for _ in 0..len {
        for x in u.iter_mut().take(dim) {
            *x = rng.gen::<f64>();
        }
        let w = objective.space.denormalize_unchecked(&u[..dim]);
        if objective.evaluate_in_box(&w) > critical_value {
            hits += 1;
        }
    }
    hits
}

/// Oracle estimate from a total exceedance count: `(p, sqrt(p (1 - p) / n))`.
pub fn oracle_from_hits(hits: u64, n: u64) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, libm::sqrt(p * (1.0 - p) / n as f64))
}

/// Fraction of `n` uniform draws whose objective exceeds `critical_value`,
/// with its binomial standard error.
pub fn oracle_probability(
    objective: &SyntheticObjective,
    critical_value: f64,
    n: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Domain("oracle needs at least one draw".into()));
    }
    let blocks = n.div_ceil(ORACLE_BLOCK);
    let hits: u64 = (0..blocks).map(|b| oracle_block(objective, critical_value, n, seed, b)).sum();
    Ok(oracle_from_hits(hits, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objective(kind: SyntheticFamily, noise: f64) -> SyntheticObjective {
        let spec = SyntheticObjectiveSpec { kind, noise_scale: noise, seed: 7 };
        SyntheticObjective::new(spec, ParameterSpace::wing_default()).unwrap()
    }

    fn corner(high: bool) -> [f64; 6] {
        let s = ParameterSpace::wing_default();
        let mut w = [0.0; 6];
        for (x, d) in w.iter_mut().zip(s.dims()) {
            *x = if high { d.max } else { d.min };
        }
        w
    }

    #[test]
    fn closed_form_corners() {
        let f = objective(SyntheticFamily::Quadratic, 0.0);
        assert!((f.evaluate(&corner(false)).unwrap() - 0.12).abs() < 1e-15);
        assert!((f.evaluate(&corner(true)).unwrap() - 0.96).abs() < 1e-15);
        let lin = objective(SyntheticFamily::Linear, 0.0);
        assert!((lin.evaluate(&corner(true)).unwrap() - 0.81).abs() < 1e-15);
    }

    #[test]
    fn out_of_box_is_domain_error() {
        let f = objective(SyntheticFamily::Quadratic, 0.01);
        let mut w = corner(true);
        w[3] = 8.5;
        assert!(matches!(f.evaluate(&w), Err(Error::Domain(_))));
        assert!(SyntheticObjective::new(
            SyntheticObjectiveSpec::new(SyntheticFamily::Linear, 0),
            ParameterSpace::new(alloc::vec![crate::ParameterDef::new("x", 0.0, 1.0).unwrap()]).unwrap()
        )
        .is_err());
    }

    #[test]
    fn noise_is_pure_and_bounded() {
        let f = objective(SyntheticFamily::Noisy, 0.05);
        let w = [10.0, 30.0, 1.0, 4.0, 2.5, 0.2];
        assert_eq!(f.evaluate(&w).unwrap().to_bits(), f.evaluate(&w).unwrap().to_bits());
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for k in 0..10_000u64 {
            let e = pseudo_noise(k, &w);
            lo = lo.min(e);
            hi = hi.max(e);
            sum += e;
        }
        assert!(lo >= -1.0 && hi <= 1.0);
        assert!(lo < -0.99 && hi > 0.99);
        assert!((sum / 10_000.0).abs() < 0.03);
        assert_ne!(pseudo_noise(1, &w), pseudo_noise(2, &w));
    }

    #[test]
    fn oracle_extremes() {
        let f = objective(SyntheticFamily::Quadratic, 0.01);
        assert_eq!(oracle_probability(&f, 0.0, 1000, 1).unwrap().0, 1.0);
        assert_eq!(oracle_probability(&f, 1.2, 1000, 1).unwrap().0, 0.0);
        assert!(oracle_probability(&f, 0.5, 0, 1).is_err());
    }
}
