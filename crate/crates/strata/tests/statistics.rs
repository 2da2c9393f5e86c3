//! Replicated campaigns on the calibrated synthetic objective against its
//! brute-force truth.

use strata::core::synthetic::{oracle_probability, SyntheticFamily, CALIBRATED_CRITICAL_VALUE};
use strata::{parallel_oracle, EvaluatorConfig, RunConfig, RunState, Runner};

/// Hits of the calibrated objective in 10^7 oracle draws (seed 12345).
const TRUTH_HITS: u64 = 18_878;
const TRUTH: f64 = 0.0018878;

fn calibrated(mut config: RunConfig) -> RunConfig {
    config.evaluator =
        EvaluatorConfig::Synthetic { family: SyntheticFamily::Quadratic, noise_scale: None, seed: Some(7) };
    config
}

fn campaign(config: RunConfig) -> RunState {
    let evaluator = config.build_evaluator(None).unwrap();
    Runner { evaluator: evaluator.as_ref(), parallelism: 1, run_dir: None }.run(config).unwrap()
}

#[test]
fn recorded_truth() {
    let config = calibrated(RunConfig::single_default(CALIBRATED_CRITICAL_VALUE, 0));
    let objective = config.synthetic_objective().unwrap();
    let (p, se) = parallel_oracle(&objective, CALIBRATED_CRITICAL_VALUE, 10_000_000, 12345).unwrap();
    assert_eq!(p, TRUTH_HITS as f64 / 1e7);
    assert_eq!(p, TRUTH);
    let binomial = (p * (1.0 - p) / 1e7).sqrt();
    assert!((se - binomial).abs() < 1e-18 && se < 1.5e-5, "{se}");
    // the parallel reduction counts the same draws as the sequential one
    let seq = oracle_probability(&objective, CALIBRATED_CRITICAL_VALUE, 1_000_000, 99).unwrap();
    assert_eq!(parallel_oracle(&objective, CALIBRATED_CRITICAL_VALUE, 1_000_000, 99).unwrap(), seq);
}

#[test]
fn single_campaign_lands_within_four_standard_errors() {
    // a 10^6 pool keeps 200 campaigns quick; p1 noise stays far below s
    let mut within = 0;
    for seed in 1000..1200 {
        let mut config = calibrated(RunConfig::single_default(CALIBRATED_CRITICAL_VALUE, seed));
        config.pool_size = 1_000_000;
        let e = campaign(config).latest_estimate().unwrap().clone();
        within += usize::from((e.probability - TRUTH).abs() <= 4.0 * e.unbiased_variance.sqrt());
    }
    assert!(within >= 190, "{within}/200 within 4s");
}

#[test]
fn multi_campaign_is_more_efficient_than_single() {
    let mut better = 0;
    for seed in 0..50 {
        let mut single = calibrated(RunConfig::single_default(CALIBRATED_CRITICAL_VALUE, seed));
        let mut multi = calibrated(RunConfig::multi_default(CALIBRATED_CRITICAL_VALUE, seed));
        single.pool_size = 1_000_000;
        multi.pool_size = 1_000_000;
        let s = campaign(single);
        let m = campaign(multi);
        let rs = s.latest_estimate().unwrap().efficiency(s.evaluations());
        let rm = m.latest_estimate().unwrap().efficiency(m.evaluations());
        better += usize::from(matches!((rm, rs), (Some(a), Some(b)) if a > b) || (rm.is_some() && rs.is_none()));
    }
    assert!(better > 25, "multi more efficient in {better}/50");
}
