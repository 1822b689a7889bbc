//! Bundled validation suites.

use std::path::Path;

use serde::{Deserialize, Serialize};

use nla_core::build_grid;
use nla_core::oracles::lemmas::{default_lemma_grids, shift_mass_sweep};
use nla_core::oracles::packing::certify_min_distance;
use nla_core::oracles::tails::{mc_tail_shared, tail_slope};
use nla_core::oracles::{
    calibrated_packing_family, fooling_pair, grid_disagreement, quadrature_lemma_checks, random_bound_checks,
    random_pointwise_checks, PackingParams,
};

use crate::commands::RunOutcome;
use crate::manifest::sha256_hex;
use crate::CliResult;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Thresh,
    Tails,
    Lemmas,
    Packing,
    Fooling,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

fn thresh(seed: u64) -> CliResult<Vec<Check>> {
    let bound = random_bound_checks(100_000, seed)?;
    let pointwise = random_pointwise_checks(1_000_000, seed);
    Ok(vec![
        check(
            "deterministic bound",
            bound.violations == 0,
            format!("{} violations in {} instances", bound.violations, bound.checked),
        ),
        check(
            "pointwise lemma",
            pointwise.violations == 0,
            format!("{} violations in {} triples", pointwise.violations, pointwise.checked),
        ),
    ])
}

fn tails(seed: u64) -> CliResult<Vec<Check>> {
    let t_grid: Vec<f64> = (0..=500).map(|i| 0.5 + i as f64 / 500.0).collect();
    let tables = mc_tail_shared(&[0.0, 1.0, 2.0], 1.0, 1024, 2.0, &t_grid, 20_000, seed)?;
    Ok(tables
        .iter()
        .map(|table| match tail_slope(table, 1e-4, 1e-1) {
            Ok(fit) => check(
                &format!("tail slope, lambda = {}", table.lambda),
                fit.slope <= -0.125,
                format!("slope {:.2} over {} points, at most -1/8 required", fit.slope, fit.points),
            ),
            Err(e) => check(&format!("tail slope, lambda = {}", table.lambda), false, e.to_string()),
        })
        .collect())
}

fn lemmas() -> CliResult<Vec<Check>> {
    let mut cases = 0;
    let mut failures = 0;
    for sigma in [0.1, 1.0, 10.0] {
        let sweep = shift_mass_sweep(sigma, 100, 60, 60)?;
        cases += sweep.len();
        failures += sweep.iter().filter(|s| !s.bound_ok).count();
    }
    let (q, a, tau, abc) = default_lemma_grids();
    let report = quadrature_lemma_checks(&q, &a, &tau, &abc)?;
    let worst = report.series.iter().map(|s| s.constant).fold(0.0, f64::max);
    Ok(vec![
        check(
            "gaussian shift mass",
            failures == 0,
            format!("{failures} failures in {cases} (alpha, |y|) cases"),
        ),
        check(
            "tail integral and series bounds",
            report.passed,
            format!(
                "{} integral and {} series checks, largest series constant {worst:.3}",
                report.integrals.len(),
                report.series.len()
            ),
        ),
    ])
}

fn packing(seed: u64) -> CliResult<Vec<Check>> {
    let params = PackingParams {
        seed,
        ..PackingParams::new(16, 1, 2.0, 2.0, 2.0, 1.0)
    };
    let family = calibrated_packing_family(&params, 8)?;
    let rescanned = certify_min_distance(&family.signs.vectors);
    Ok(vec![
        check(
            "min Hamming distance",
            family.signs.min_distance >= 4 && rescanned == family.signs.min_distance,
            format!("{} by exhaustive scan, at least 4 required", rescanned),
        ),
        check("family size", family.size() >= 4, format!("{} members", family.size())),
        check(
            "calibrated seminorms",
            family.seminorm_checked == family.size() && family.max_seminorm <= 1.0,
            format!("max {:.4} over {} members", family.max_seminorm, family.seminorm_checked),
        ),
        check(
            "separation",
            family.min_separation >= family.separation_bound * (1.0 - 1e-9),
            format!("{:.4e} against bound {:.4e}", family.min_separation, family.separation_bound),
        ),
    ])
}

fn fooling() -> CliResult<Vec<Check>> {
    let mut exact = true;
    let mut constants = Vec::new();
    for n in 3..=7 {
        let pair = fooling_pair(&build_grid(n, 1)?, 2.0, 2.0, 2.0)?;
        exact &= grid_disagreement(&pair) == 0.0;
        constants.push(pair.report.constant);
    }
    let lo = constants.iter().cloned().fold(f64::MAX, f64::min);
    let hi = constants.iter().cloned().fold(0.0, f64::max);
    Ok(vec![
        check("grid agreement", exact, "f and g vanish at every grid point for n = 3..7".into()),
        check(
            "separation stability",
            hi / lo <= 1.3,
            format!("constants {lo:.4}..{hi:.4}, ratio {:.3}", hi / lo),
        ),
    ])
}

pub fn run(suite: Suite, seed: u64, out: Option<&Path>) -> CliResult<RunOutcome> {
    let checks = match suite {
        Suite::Thresh => thresh(seed)?,
        Suite::Tails => tails(seed)?,
        Suite::Lemmas => lemmas()?,
        Suite::Packing => packing(seed)?,
        Suite::Fooling => fooling()?,
    };
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let report = SuiteReport {
        suite,
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    let mut outputs = Vec::new();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("validate.json");
        std::fs::write(&path, &json)?;
        outputs.push(path);
    }
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    Ok(RunOutcome {
        regime: None,
        rows: Vec::new(),
        outputs,
        digest: sha256_hex(json.as_bytes()),
        failure: (!failed.is_empty()).then(|| format!("{suite:?} suite: {}", failed.join(", "))),
    })
}
