//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line straight to
//! stderr (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use nla_core::analysis::{lq_distance, lq_norm, rate_fit, risk_curve, QuadratureSpec, RiskPoint, RiskSetting};
use nla_core::oracles::fooling::grid_disagreement;
use nla_core::oracles::lemmas::{default_lemma_grids, shift_mass_sweep};
use nla_core::oracles::packing::certify_min_distance;
use nla_core::oracles::tails::{mc_tail_shared, tail_slope};
use nla_core::oracles::{
    bundled_target, calibrated_packing_family, check_deterministic_bound, check_pointwise_thresh, fooling_pair,
    quadrature_lemma_checks, PackingParams,
};
use nla_core::polybasis::{equivalence_bracket, PolySpaceSpec};
use nla_core::rng::stream;
use nla_core::shrinkage::{epsilon, estimate_with_report};
use nla_core::{build_grid, observe, EstimatorConfig, FunctionOracle, NoiseKind, PiecewisePoly};

fn report(id: u32, name: &str, pass: bool, elapsed: Duration, limit: Option<Duration>, detail: &str) {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let verdict = if pass && in_time { "PASS" } else { "FAIL" };
    let limit = limit.map(|l| format!(" (limit {:.0}s)", l.as_secs_f64())).unwrap_or_default();
    let line = format!(
        "acceptance {id:>2} {verdict} {name}: {detail} [{:.2}s{limit}]\n",
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(in_time, "criterion {id} exceeded its time limit");
}

fn config_s2() -> EstimatorConfig {
    EstimatorConfig::new(2.0, 2.0, 2.0, 1)
}

#[test]
fn c01_projection_exactness() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for d in 1..=2usize {
        let n = if d == 1 { 7 } else { 5 };
        let config = EstimatorConfig::new(2.0, 2.0, 2.0, d);
        let r = config.order();
        let spec = PolySpaceSpec::new(r, d).unwrap();
        let grid = build_grid(n, d).unwrap();
        let quad = QuadratureSpec::for_grid(n);

        let poly = FunctionOracle::new("order-3 polynomial", d, |x: &[f64]| {
            0.5 - x[0] + 2.0 * x[0] * x[x.len() - 1] - 0.7 * x[x.len() - 1] * x[x.len() - 1]
        });
        let obs = observe(&poly, &grid, 0.0, NoiseKind::Gaussian, 0).unwrap();
        let fit = estimate_with_report(&obs, &config).unwrap().output;
        worst = worst.max(lq_distance(&poly, &fit, f64::INFINITY, &quad).unwrap());

        let k_max = n - r as u32;
        let mut rng = stream(1, &[d as u64]);
        let cells = 1usize << (k_max as usize * d);
        let coeffs: Vec<f64> = (0..cells * spec.rho).map(|_| rng.sample(StandardNormal)).collect();
        let target = PiecewisePoly::from_coeffs(k_max, spec, 1 << r, coeffs).unwrap();
        let obs = observe(&target, &grid, 0.0, NoiseKind::Gaussian, 0).unwrap();
        let fit = estimate_with_report(&obs, &config).unwrap().output;
        worst = worst.max(lq_distance(&target, &fit, f64::INFINITY, &quad).unwrap());
    }
    report(
        1,
        "projection exactness",
        worst <= 1e-9,
        start.elapsed(),
        Some(Duration::from_secs(5)),
        &format!("max L_inf error {worst:.3e} (tolerance 1e-9)"),
    );
}

fn noiseless_slope(name: &str) -> (f64, Vec<RiskPoint>) {
    let target = bundled_target(name, 1).unwrap();
    let settings: Vec<RiskSetting> = (4..=9).map(|n| RiskSetting { n, sigma: 0.0 }).collect();
    let points = risk_curve(&config_s2(), &target.oracle, &settings, 1, 0, NoiseKind::Gaussian).unwrap();
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.m as f64, p.mean)).collect();
    (rate_fit(&pairs).unwrap().slope, points)
}

#[test]
fn c02_noiseless_rate() {
    let start = Instant::now();
    let (slope, _) = noiseless_slope("bump-s2");
    let (smooth_slope, _) = noiseless_slope("smooth-bump");
    report(
        2,
        "noiseless rate",
        (slope + 2.0).abs() <= 0.25,
        start.elapsed(),
        Some(Duration::from_secs(60)),
        &format!(
            "slope {slope:.3} vs -2 +- 0.25 for the smoothness-2 bump; C-infinity bump slope {smooth_slope:.3} (informational)"
        ),
    );
}

#[test]
fn c03_noise_dominated_rate() {
    let start = Instant::now();
    let config = config_s2();
    let n = 10;
    let m = 1usize << n;
    let target = bundled_target("bump-s2", 1).unwrap();
    let settings: Vec<RiskSetting> = (0..6)
        .map(|i| RiskSetting {
            n,
            sigma: 2f64.powi(i).sqrt(),
        })
        .collect();
    let floor = (m as f64).powf(-config.s);
    let in_regime = settings.iter().all(|st| epsilon(st.sigma, m, config.s, 1) > floor);
    let points = risk_curve(&config, &target.oracle, &settings, 50, 3, NoiseKind::Gaussian).unwrap();
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.setting.sigma.powi(2) / m as f64, p.mean))
        .collect();
    let slope = rate_fit(&pairs).unwrap().slope;
    report(
        3,
        "noise-dominated rate",
        in_regime && (slope - 0.4).abs() <= 0.15,
        start.elapsed(),
        Some(Duration::from_secs(600)),
        &format!("slope {slope:.3} vs 0.4 +- 0.15 over sigma^2 = 1..32 at m = {m}"),
    );
}

#[test]
fn c04_small_noise_reconciliation() {
    let start = Instant::now();
    let target = bundled_target("bump-s2", 1).unwrap();
    let sigmas = [0.0, 1e-6, 1e-3, 1e-1];
    let settings: Vec<RiskSetting> = sigmas.iter().map(|&sigma| RiskSetting { n: 8, sigma }).collect();
    let points = risk_curve(&config_s2(), &target.oracle, &settings, 20, 4, NoiseKind::Gaussian).unwrap();
    let ratio = points[1].mean / points[0].mean;
    let factor_ok = (0.5..=2.0).contains(&ratio);
    let monotone = points.windows(2).all(|w| {
        let slack = 2.0 * (w[0].std_error().powi(2) + w[1].std_error().powi(2)).sqrt();
        w[1].mean + slack >= w[0].mean
    });
    let means: Vec<String> = points.iter().map(|p| format!("{:.3e}", p.mean)).collect();
    report(
        4,
        "sigma -> 0 reconciliation",
        factor_ok && monotone,
        start.elapsed(),
        None,
        &format!("risk(1e-6)/risk(0) = {ratio:.4}, risks [{}]", means.join(", ")),
    );
}

#[test]
fn c05_step0_guard() {
    let start = Instant::now();
    let target = bundled_target("bump-s2", 1).unwrap();
    let n = 8;
    let grid = build_grid(n, 1).unwrap();
    let m = grid.m() as f64;
    let mut pass = true;
    let mut details = Vec::new();
    for (scale, sigma_factor) in [(1.0, 1.0), (1.0, 3.0), (2.0, 1.0)] {
        let sigma = scale * m.sqrt() * sigma_factor;
        let config = EstimatorConfig {
            norm_scale: scale,
            sigma: Some(sigma),
            ..config_s2()
        };
        let obs = observe(&target.oracle, &grid, sigma, NoiseKind::Gaussian, 5).unwrap();
        let out = estimate_with_report(&obs, &config).unwrap();
        let zero = out.output.coeffs().iter().all(|&c| c == 0.0);
        let quad = QuadratureSpec::for_grid(n);
        let risk = lq_distance(&target.oracle, &out.output, 2.0, &quad).unwrap();
        let norm = lq_norm(&target.oracle, 2.0, &quad).unwrap();
        pass &= out.step0 && zero && risk <= norm;
        details.push(format!("M={scale} sigma={sigma:.1}: zero={zero} risk {risk:.4} <= {norm:.4}"));
    }
    report(5, "step-0 guard", pass, start.elapsed(), None, &details.join("; "));
}

#[test]
fn c06_deterministic_bound() {
    let start = Instant::now();
    let mut rng = stream(6, &[]);
    let mut violations = 0;
    let instances = 100_000;
    for _ in 0..instances {
        let len = rng.random_range(1..=64);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let nu: Vec<f64> = (0..len)
            .map(|_| {
                let v: f64 = rng.sample(StandardNormal);
                if rng.random_bool(0.3) {
                    0.0
                } else {
                    scale * v * v * v
                }
            })
            .collect();
        let noise = scale * rng.random_range(0.0..1.0);
        let xi: Vec<f64> = (0..len).map(|_| noise * rng.sample::<f64, _>(StandardNormal)).collect();
        let lambda = scale * rng.random_range(0.0..3.0);
        let q = rng.random_range(1.0..=4.0);
        let p = rng.random_range(0.25..=q);
        if !check_deterministic_bound(&nu, &xi, lambda, p, q).unwrap().holds {
            violations += 1;
        }
    }
    report(
        6,
        "deterministic thresholding bound",
        violations == 0,
        start.elapsed(),
        Some(Duration::from_secs(30)),
        &format!("{violations} violations in {instances} instances"),
    );
}

#[test]
fn c07_pointwise_lemma() {
    let start = Instant::now();
    let mut rng = stream(7, &[]);
    let mut violations = 0;
    let triples = 1_000_000;
    for i in 0..triples {
        let lambda: f64 = rng.random_range(0.0..4.0);
        let (x, eps) = if i % 10 == 0 {
            // exact boundary cases
            let signs = [-1.0, 1.0];
            (signs[rng.random_range(0..2)] * lambda * 0.5, signs[rng.random_range(0..2)] * lambda * 0.5)
        } else {
            (
                rng.random_range(-3.0..3.0) * lambda.max(0.1),
                rng.random_range(-3.0..3.0) * lambda.max(0.1),
            )
        };
        if !check_pointwise_thresh(x, eps, lambda) {
            violations += 1;
        }
    }
    report(
        7,
        "pointwise thresholding lemma",
        violations == 0,
        start.elapsed(),
        Some(Duration::from_secs(10)),
        &format!("{violations} violations in {triples} triples"),
    );
}

#[test]
fn c08_tail_shape() {
    let start = Instant::now();
    let t_grid: Vec<f64> = (0..=500).map(|i| 0.5 + i as f64 / 500.0).collect();
    let lambdas = [0.0, 1.0, 2.0];
    let tables = mc_tail_shared(&lambdas, 1.0, 4096, 2.0, &t_grid, 100_000, 8).unwrap();
    let mut pass = true;
    let mut details = Vec::new();
    for table in &tables {
        match tail_slope(table, 1e-4, 1e-1) {
            Ok(fit) => {
                pass &= fit.slope <= -0.125;
                details.push(format!(
                    "lambda={}: slope {:.2} over {} points (b^2 spread {:.3})",
                    table.lambda, fit.slope, fit.points, fit.b_spread
                ));
            }
            Err(e) => {
                pass = false;
                details.push(format!("lambda={}: {e}", table.lambda));
            }
        }
    }
    report(8, "tail shape", pass, start.elapsed(), Some(Duration::from_secs(120)), &details.join("; "));
}

#[test]
fn c09_norm_equivalence() {
    let start = Instant::now();
    let mut pass = true;
    let mut worst = 0.0f64;
    for d in 1..=2usize {
        for r in 1..=4usize {
            let spec = PolySpaceSpec::new(r, d).unwrap();
            let first = (1..).find(|&n: &usize| n.pow(d as u32) > spec.rho).unwrap();
            let mut rng = stream(9, &[d as u64, r as u64]);
            let mut samples: Vec<Vec<f64>> = (0..spec.rho)
                .map(|j| (0..spec.rho).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
                .collect();
            samples.extend((0..24).map(|_| (0..spec.rho).map(|_| rng.sample(StandardNormal)).collect()));
            for q in [1.0, 2.0, f64::INFINITY] {
                let small: Vec<usize> = (first..=32).collect();
                let large: Vec<usize> = (33..=64).collect();
                let b32 = equivalence_bracket(spec, q, &small, &samples).unwrap();
                let b64 = equivalence_bracket(spec, q, &large, &samples).unwrap().max(b32);
                worst = worst.max(b64 / b32);
                pass &= b64 <= 1.1 * b32;
            }
        }
    }
    report(
        9,
        "norm-equivalence stabilization",
        pass,
        start.elapsed(),
        None,
        &format!("largest bracket growth from N <= 32 to N <= 64: {:.2}%", 100.0 * (worst - 1.0)),
    );
}

#[test]
fn c10_lower_bound_fixtures() {
    let start = Instant::now();
    let mut exact_zero = true;
    let mut constants = Vec::new();
    for n in 3..=7 {
        let pair = fooling_pair(&build_grid(n, 1).unwrap(), 2.0, 2.0, 2.0).unwrap();
        exact_zero &= grid_disagreement(&pair) == 0.0 && pair.report.seminorm <= 1.0;
        constants.push(pair.report.constant);
    }
    let lo = constants.iter().cloned().fold(f64::MAX, f64::min);
    let hi = constants.iter().cloned().fold(0.0, f64::max);
    let stable = hi / lo <= 1.3;

    let params = PackingParams::new(16, 1, 2.0, 2.0, 2.0, 1.0);
    let family = calibrated_packing_family(&params, 8).unwrap();
    let rescanned = certify_min_distance(&family.signs.vectors);
    let packing_ok = family.signs.min_distance >= 4
        && rescanned == family.signs.min_distance
        && family.size() >= 4
        && family.seminorm_checked == family.size()
        && family.max_seminorm <= 1.0
        && family.min_separation >= family.separation_bound * (1.0 - 1e-9);
    report(
        10,
        "lower-bound fixtures",
        exact_zero && stable && packing_ok,
        start.elapsed(),
        None,
        &format!(
            "fooling grid values zero: {exact_zero}, separation constants {lo:.4}..{hi:.4} (ratio {:.3}); packing |S| = {}, min distance {}, max seminorm {:.3}",
            hi / lo,
            family.size(),
            family.signs.min_distance,
            family.max_seminorm
        ),
    );
}

#[test]
fn c11_appendix_checks() {
    let start = Instant::now();
    let mut sweep_ok = true;
    let mut cases = 0;
    for sigma in [0.1, 1.0, 10.0] {
        let sweep = shift_mass_sweep(sigma, 100, 60, 60).unwrap();
        cases += sweep.len();
        sweep_ok &= sweep.iter().all(|s| s.bound_ok);
    }
    let (q, a, tau, abc) = default_lemma_grids();
    let lemmas = quadrature_lemma_checks(&q, &a, &tau, &abc).unwrap();
    let worst_c = lemmas.series.iter().map(|s| s.constant).fold(0.0, f64::max);
    report(
        11,
        "appendix checks",
        sweep_ok && lemmas.passed,
        start.elapsed(),
        Some(Duration::from_secs(60)),
        &format!(
            "shift-mass sweep {cases} cases ok: {sweep_ok}; integral/series checks ok: {} (largest series constant {worst_c:.3})",
            lemmas.passed
        ),
    );
}
