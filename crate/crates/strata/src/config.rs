//! Campaign configuration, read from TOML.
//!
//! ```toml
//! critical_value = 0.95
//! preliminary_count = 100
//! budgets = [99]
//! mode = "single"
//! seed = 1
//!
//! [evaluator]
//! kind = "synthetic"
//! family = "quadratic"
//! ```
//!
//! Parameters default to the six wing dimensions; give `[[parameters]]`
//! tables (name, min, max) to replace them.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use strata_core::allocation::DEFAULT_CANDIDATE_CAP;
use strata_core::conditional::DEFAULT_N_CONFIDENT;
use strata_core::rng::{mix, Stream};
use strata_core::strata::DEFAULT_HALFWIDTH_SIGMAS;
use strata_core::synthetic::{SyntheticFamily, SyntheticObjective, SyntheticObjectiveSpec};
use strata_core::{ParameterDef, ParameterSpace, Rounding, SigmaMode};

use crate::error::{Result, RunError};
use crate::evaluator::{Evaluator, ExternalEvaluator, SyntheticEvaluator};

pub const DEFAULT_POOL_SIZE: u64 = 10_000_000;
pub const MIN_POOL_SIZE: u64 = 1_000;
/// Below this many pool hits a stratum is too small to search for
/// candidates within the default cap.
pub const DEFAULT_MIN_POOL_HITS: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One allocation from the preliminary surrogate, Laplace-predicted p2.
    Single,
    /// Refit and re-stratify after every iteration, hybrid p2.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EvaluatorConfig {
    Synthetic {
        family: SyntheticFamily,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_scale: Option<f64>,
        /// Noise key; derived from the master seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    External {
        command: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PreliminaryDesign {
    Uniform,
    /// `outer` draws of the first `split` dimensions crossed with `inner`
    /// draws of the rest.
    Grid {
        split: usize,
        outer: usize,
        inner: usize,
        #[serde(default = "yes")]
        shared_inner: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub critical_value: f64,
    pub preliminary_count: usize,
    pub budgets: Vec<usize>,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub evaluator: EvaluatorConfig,
    #[serde(default = "default_inner_strata")]
    pub inner_strata: usize,
    #[serde(default = "default_halfwidth")]
    pub band_halfwidth_sigmas: f64,
    #[serde(default = "default_pool_size")]
    pub pool_size: u64,
    #[serde(default = "default_n_confident")]
    pub n_confident: u32,
    #[serde(default)]
    pub sigma_mode: SigmaMode,
    #[serde(default)]
    pub rounding: Rounding,
    #[serde(default = "default_candidate_cap")]
    pub candidate_cap: u64,
    /// Strata hit fewer times by the pool get no new evaluations.
    #[serde(default = "default_min_pool_hits")]
    pub min_pool_hits: u64,
    #[serde(default = "default_preliminary")]
    pub preliminary: PreliminaryDesign,
    /// Skip remaining budgets once the unbiased variance drops below this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_below_unbiased_variance: Option<f64>,
    #[serde(default = "default_parameters")]
    pub parameters: Vec<ParameterDef>,
}

fn default_inner_strata() -> usize {
    100
}
fn default_halfwidth() -> f64 {
    DEFAULT_HALFWIDTH_SIGMAS
}
fn default_pool_size() -> u64 {
    DEFAULT_POOL_SIZE
}
fn default_n_confident() -> u32 {
    DEFAULT_N_CONFIDENT
}
fn default_candidate_cap() -> u64 {
    DEFAULT_CANDIDATE_CAP
}
fn default_min_pool_hits() -> u64 {
    DEFAULT_MIN_POOL_HITS
}
fn default_preliminary() -> PreliminaryDesign {
    PreliminaryDesign::Uniform
}
fn default_parameters() -> Vec<ParameterDef> {
    ParameterSpace::wing_default().dims().to_vec()
}

impl RunConfig {
    /// 100 preliminary runs, then 99 adaptive ones over 102 strata, on the quadratic objective.
    pub fn single_default(critical_value: f64, seed: u64) -> Self {
        RunConfig {
            critical_value,
            preliminary_count: 100,
            budgets: vec![99],
            mode: Mode::Single,
            seed,
            evaluator: EvaluatorConfig::Synthetic { family: SyntheticFamily::Quadratic, noise_scale: None, seed: None },
            inner_strata: 100,
            band_halfwidth_sigmas: DEFAULT_HALFWIDTH_SIGMAS,
            pool_size: DEFAULT_POOL_SIZE,
            n_confident: DEFAULT_N_CONFIDENT,
            sigma_mode: SigmaMode::Rms,
            rounding: Rounding::default(),
            candidate_cap: DEFAULT_CANDIDATE_CAP,
            min_pool_hits: DEFAULT_MIN_POOL_HITS,
            preliminary: PreliminaryDesign::Uniform,
            stop_below_unbiased_variance: None,
            parameters: default_parameters(),
        }
    }

    /// Two small adaptive iterations after ten preliminary runs.
    pub fn multi_default(critical_value: f64, seed: u64) -> Self {
        RunConfig {
            preliminary_count: 10,
            budgets: vec![30, 21],
            mode: Mode::Multi,
            inner_strata: 20,
            ..Self::single_default(critical_value, seed)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            RunError::Config(m) => RunError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn space(&self) -> Result<ParameterSpace> {
        ParameterSpace::new(self.parameters.clone()).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RunError::Config(m));
        let space = self.space()?;
        if !self.critical_value.is_finite() {
            return bad(format!("critical_value {} is not finite", self.critical_value));
        }
        if self.preliminary_count < space.dim() + 1 {
            return bad(format!("preliminary_count {} is below dim + 1 = {}", self.preliminary_count, space.dim() + 1));
        }
        if self.budgets.is_empty() {
            return bad("budgets must list at least one iteration".into());
        }
        if self.mode == Mode::Single && self.budgets.len() != 1 {
            return bad(format!("single mode takes exactly one budget, got {}", self.budgets.len()));
        }
        if self.pool_size < MIN_POOL_SIZE {
            return bad(format!("pool_size {} is below {MIN_POOL_SIZE}", self.pool_size));
        }
        if self.inner_strata == 0 {
            return bad("inner_strata must be at least 1".into());
        }
        if !(self.band_halfwidth_sigmas > 0.0 && self.band_halfwidth_sigmas.is_finite()) {
            return bad(format!("band_halfwidth_sigmas {} must be positive", self.band_halfwidth_sigmas));
        }
        if self.n_confident == 0 {
            return bad("n_confident must be at least 1".into());
        }
        if self.candidate_cap == 0 {
            return bad("candidate_cap must be at least 1".into());
        }
        if let Some(v) = self.stop_below_unbiased_variance {
            if v.is_nan() || v <= 0.0 {
                return bad(format!("stop_below_unbiased_variance {v} must be positive"));
            }
        }
        if let PreliminaryDesign::Grid { split, outer, inner, .. } = self.preliminary {
            if outer * inner != self.preliminary_count {
                return bad(format!(
                    "grid design {outer} x {inner} does not give preliminary_count {}",
                    self.preliminary_count
                ));
            }
            if split == 0 || split >= space.dim() {
                return bad(format!("grid split {split} must be in 1..{}", space.dim()));
            }
        }
        match &self.evaluator {
            EvaluatorConfig::Synthetic { .. } => {
                self.synthetic_objective()?;
            }
            EvaluatorConfig::External { command, timeout_secs } => {
                if command.is_empty() {
                    return bad("external evaluator command is empty".into());
                }
                if let Some(t) = timeout_secs {
                    if !(*t > 0.0 && t.is_finite()) {
                        return bad(format!("timeout_secs {t} must be positive"));
                    }
                }
            }
        }
        Ok(())
    }

    /// The in-process objective, for synthetic evaluator configs.
    pub fn synthetic_objective(&self) -> Result<SyntheticObjective> {
        let EvaluatorConfig::Synthetic { family, noise_scale, seed } = &self.evaluator else {
            return Err(RunError::Config("the evaluator is not synthetic".into()));
        };
        let spec = SyntheticObjectiveSpec {
            kind: *family,
            noise_scale: noise_scale.unwrap_or(family.default_noise_scale()),
            seed: seed.unwrap_or_else(|| mix(self.seed, Stream::SyntheticNoise as u64)),
        };
        SyntheticObjective::new(spec, self.space()?).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn build_evaluator(&self, run_dir: Option<&Path>) -> Result<Box<dyn Evaluator>> {
        Ok(match &self.evaluator {
            EvaluatorConfig::Synthetic { .. } => Box::new(SyntheticEvaluator::new(self.synthetic_objective()?)),
            EvaluatorConfig::External { command, timeout_secs } => {
                let mut ext = ExternalEvaluator::new(command.clone(), self.space()?);
                if let Some(t) = timeout_secs {
                    ext.timeout = Duration::from_secs_f64(*t);
                }
                ext.run_dir = run_dir.map(|d| std::fs::canonicalize(d).unwrap_or_else(|_| PathBuf::from(d)));
                Box::new(ext)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_toml_takes_defaults() {
        let c = RunConfig::from_toml(
            r#"
            critical_value = 0.95
            preliminary_count = 100
            budgets = [99]
            mode = "single"
            [evaluator]
            kind = "synthetic"
            family = "quadratic"
            "#,
        )
        .unwrap();
        assert_eq!(c.pool_size, 10_000_000);
        assert_eq!(c.inner_strata, 100);
        assert_eq!(c.n_confident, 10);
        assert_eq!(c.parameters.len(), 6);
        assert_eq!(c.preliminary, PreliminaryDesign::Uniform);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::multi_default(0.9, 4);
        c.preliminary = PreliminaryDesign::Grid { split: 3, outer: 5, inner: 2, shared_inner: true };
        c.stop_below_unbiased_variance = Some(1e-8);
        c.evaluator =
            EvaluatorConfig::External { command: vec!["python3".into(), "x.py".into()], timeout_secs: Some(5.0) };
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_configs() {
        let ok = RunConfig::single_default(0.95, 1);
        type Tweak = Box<dyn Fn(&mut RunConfig)>;
        let cases: Vec<Tweak> = vec![
            Box::new(|c| c.preliminary_count = 6),
            Box::new(|c| c.budgets.clear()),
            Box::new(|c| c.budgets = vec![10, 10]),
            Box::new(|c| c.pool_size = 999),
            Box::new(|c| c.inner_strata = 0),
            Box::new(|c| c.n_confident = 0),
            Box::new(|c| c.critical_value = f64::NAN),
            Box::new(|c| c.parameters.truncate(5)),
        ];
        for (k, f) in cases.iter().enumerate() {
            let mut c = ok.clone();
            f(&mut c);
            assert!(matches!(c.validate(), Err(RunError::Config(_))), "case {k}");
        }
        assert!(ok.validate().is_ok());
        assert!(RunConfig::from_toml("critical_value = 1").is_err());
    }
}
