//! Independent reference computations checked against the library paths.

use rand::Rng;
use strata_core::allocation::{allocate, optimal_weights, variance_objective};
use strata_core::conditional::{laplace_exceedance, observe_pairs, predict_p2};
use strata_core::rng::{substream, Stream};
use strata_core::strata::{estimate_weights, StratumSet};
use strata_core::synthetic::{SyntheticFamily, SyntheticObjective, SyntheticObjectiveSpec};
use strata_core::{ParameterDef, ParameterSpace, SigmaMode, SurrogateModel};

/// Gram-matrix solve by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn normal_equations_oracle(rows: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, y) in rows.iter().zip(ys) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * y;
        }
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        for r in col + 1..p {
            let f = a[r][col] / a[col][col];
            for c in col..=p {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| a[i][j] * x[j]).sum();
        x[i] = (a[i][p] - s) / a[i][i];
    }
    x
}

#[test]
fn fit_matches_normal_equations_oracle() {
    let space = ParameterSpace::wing_default();
    let f = SyntheticObjective::new(SyntheticObjectiveSpec::new(SyntheticFamily::Noisy, 3), space.clone()).unwrap();
    let mut rng = substream(77, Stream::PreliminaryDraws, &[]);
    let pts = space.sample_uniform(&mut rng, 50);
    let ys: Vec<f64> = pts.iter().map(|w| f.evaluate(w).unwrap()).collect();
    let refs: Vec<&[f64]> = pts.iter().map(|w| w.values()).collect();
    let model = SurrogateModel::fit_points(&space, &refs, &ys, SigmaMode::Rms).unwrap();

    let rows: Vec<Vec<f64>> = pts
        .iter()
        .map(|w| {
            let mut r = vec![1.0];
            r.extend(space.normalize(w).unwrap());
            r
        })
        .collect();
    let beta = normal_equations_oracle(&rows, &ys);
    let fitted: Vec<f64> = std::iter::once(model.intercept).chain(model.coefficients.iter().copied()).collect();
    for (a, b) in fitted.iter().zip(&beta) {
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-3), "{a} vs {b}");
    }

    let residuals: Vec<f64> =
        rows.iter().zip(&ys).map(|(r, y)| y - r.iter().zip(&fitted).map(|(x, b)| x * b).sum::<f64>()).collect();
    for j in 0..7 {
        let dot: f64 = rows.iter().zip(&residuals).map(|(r, e)| r[j] * e).sum();
        assert!(dot.abs() <= 1e-8 * 50.0, "column {j}: {dot}");
    }
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / 50.0).sqrt();
    assert!((model.sigma - rms).abs() <= 1e-12, "{} vs {rms}", model.sigma);
}

/// Adaptive Simpson quadrature.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
}

/// `P(eps > C - a)` for Laplace(0, sigma / sqrt 2) by quadrature of the density.
fn laplace_tail_by_quadrature(a: f64, c: f64, sigma: f64) -> f64 {
    let b = sigma / std::f64::consts::SQRT_2;
    let density = move |x: f64| (-(x.abs()) / b).exp() / (2.0 * b);
    let lo = c - a;
    let hi = lo.max(0.0) + 80.0 * b;
    if lo < 0.0 {
        simpson(&density, lo, 0.0, 1e-15) + simpson(&density, 0.0, hi, 1e-15)
    } else {
        simpson(&density, lo, hi, 1e-15)
    }
}

#[test]
fn laplace_point_examples_match_quadrature() {
    let (c, s) = (0.9, 0.01);
    let b = s / std::f64::consts::SQRT_2;
    for a in [c, c - b, c + b] {
        let got = laplace_exceedance(a, c, s).unwrap();
        let want = laplace_tail_by_quadrature(a, c, s);
        assert!((got - want).abs() < 1e-10, "a = {a}: {got} vs {want}");
    }
    assert!((laplace_exceedance(c - b, c, s).unwrap() - 0.1839397).abs() < 5e-8);
    assert!((laplace_exceedance(c + b, c, s).unwrap() - 0.8160603).abs() < 5e-8);

    let strata = StratumSet::build(c, s, 100, 10.0).unwrap();
    let p = predict_p2(&strata);
    let want = laplace_tail_by_quadrature(strata.midpoint(1).unwrap(), c, s);
    assert!((p[1] - want).abs() < 1e-10);
}

fn compositions(budget: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![budget]];
    }
    (0..=budget)
        .flat_map(|first| {
            compositions(budget - first, parts - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

#[test]
fn allocation_near_exhaustive_optimum() {
    let mut rng = substream(31, Stream::Oracle, &[]);
    let mut checked = 0;
    for _ in 0..300 {
        let k = rng.gen_range(2..=4usize);
        let budget = rng.gen_range(2..=12usize);
        // Dirichlet(1) via normalized exponentials
        let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = e.iter().sum();
        let p1: Vec<f64> = e.iter().map(|x| x / total).collect();
        let p2: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
        let best =
            compositions(budget, k).iter().map(|c| variance_objective(&p1, &p2, c)).fold(f64::INFINITY, f64::min);
        let got = allocate(&optimal_weights(&p1, &p2).unwrap(), budget).unwrap();
        assert_eq!(got.iter().sum::<usize>(), budget);
        let f = variance_objective(&p1, &p2, &got);
        if best.is_finite() {
            checked += 1;
            assert!(f <= 1.05 * best, "p1 {p1:?} p2 {p2:?} budget {budget}: {got:?} gives {f}, optimum {best}");
        }
    }
    assert!(checked > 200);
}

fn unit_identity(sigma: f64) -> SurrogateModel {
    SurrogateModel {
        space: ParameterSpace::new(vec![ParameterDef::new("u", 0.0, 1.0).unwrap()]).unwrap(),
        intercept: 0.0,
        coefficients: vec![1.0],
        sigma,
        sigma_mode: SigmaMode::Rms,
        training_count: 2,
    }
}

#[test]
fn pool_variance_formula_matches_replicates() {
    let model = unit_identity(0.05);
    let strata = StratumSet::build(0.5, 0.05, 10, 10.0).unwrap();
    let n = 10_000u64;
    let reps: Vec<Vec<f64>> = (0..200).map(|r| estimate_weights(&strata, &model, n, 1000 + r, 0).unwrap().p1).collect();
    for i in 1..=10 {
        let mean = reps.iter().map(|p| p[i]).sum::<f64>() / 200.0;
        let emp = reps.iter().map(|p| (p[i] - mean).powi(2)).sum::<f64>() / 199.0;
        let formula = mean * (1.0 - mean) / n as f64;
        let ratio = emp / formula;
        assert!((1.0 / 1.5..=1.5).contains(&ratio), "stratum {i}: ratio {ratio}");
    }
}

#[test]
fn doubling_the_pool_stays_within_six_standard_errors() {
    let model = unit_identity(0.05);
    let strata = StratumSet::build(0.5, 0.05, 10, 10.0).unwrap();
    let n = 10_000u64;
    let trials = 100;
    let mut ok = 0;
    for t in 0..trials {
        let a = estimate_weights(&strata, &model, n, 5000 + t, 0).unwrap().p1;
        let b = estimate_weights(&strata, &model, 2 * n, 9000 + t, 0).unwrap().p1;
        let within = a.iter().zip(&b).all(|(x, y)| {
            let p = 0.5 * (x + y);
            let se = (p * (1.0 - p) * (1.0 / n as f64 + 1.0 / (2 * n) as f64)).sqrt();
            (x - y).abs() <= 6.0 * se
        });
        ok += within as usize;
    }
    assert!(ok as f64 >= 0.99 * trials as f64, "{ok}/{trials}");
}

#[test]
fn observed_p2_tracks_oracle_rates() {
    let space = ParameterSpace::wing_default();
    let f =
        SyntheticObjective::new(SyntheticObjectiveSpec::new(SyntheticFamily::Quadratic, 11), space.clone()).unwrap();
    let mut rng = substream(12, Stream::PreliminaryDraws, &[]);
    let train = space.sample_uniform(&mut rng, 100);
    let ys: Vec<f64> = train.iter().map(|w| f.evaluate(w).unwrap()).collect();
    let refs: Vec<&[f64]> = train.iter().map(|w| w.values()).collect();
    let model = SurrogateModel::fit_points(&space, &refs, &ys, SigmaMode::Rms).unwrap();
    // a critical value in the bulk keeps every band stratum well populated
    let c = 0.6;
    let strata = StratumSet::build(c, model.sigma, 10, 10.0).unwrap();

    // oracle: 4e6 cheap draws binned by surrogate value
    let mut hits = vec![0u64; strata.len()];
    let mut exceed = vec![0u64; strata.len()];
    let mut orng = substream(13, Stream::Oracle, &[]);
    for w in space.sample_uniform(&mut orng, 4_000_000) {
        let i = strata.bin(model.predict(&w).unwrap()).unwrap();
        hits[i] += 1;
        exceed[i] += (f.evaluate(&w).unwrap() > c) as u64;
    }

    let campaign = space.sample_uniform(&mut substream(14, Stream::PreliminaryDraws, &[]), 3000);
    let pairs = campaign.iter().map(|w| (model.predict(w).unwrap(), f.evaluate(w).unwrap()));
    let obs = observe_pairs(&strata, pairs, c).unwrap();
    let mut compared = 0;
    for i in 0..strata.len() {
        let n = obs.counts[i];
        if n < 25 || hits[i] < 10_000 {
            continue;
        }
        let truth = exceed[i] as f64 / hits[i] as f64;
        let tol =
            4.0 * (truth * (1.0 - truth) / n as f64).sqrt() + 4.0 * (truth * (1.0 - truth) / hits[i] as f64).sqrt();
        let got = obs.p2_obs[i].unwrap();
        assert!((got - truth).abs() <= tol.max(1e-12), "stratum {i}: {got} vs {truth} (n = {n})");
        compared += 1;
    }
    assert!(compared >= 6, "only {compared} strata compared");
}

#[test]
fn candidate_quota_fills_at_small_mass() {
    // stratum of mass 1e-3, cap 1e4 draws per point: P(miss) <= exp(-10) per trial
    let model = unit_identity(0.05);
    let strata = StratumSet::build(0.5, 0.00005, 1, 10.0).unwrap();
    let (lo, hi) = strata.bounds(1);
    assert!((hi - lo - 1e-3).abs() < 1e-12);
    let mut failures = 0;
    for seed in 0..1000 {
        let r = strata_core::allocation::select_candidates(&strata, &model, &[0, 1, 0], seed, 0, 10_000, None);
        failures += r.is_err() as usize;
    }
    assert!(failures <= 1, "{failures} failures");
}
