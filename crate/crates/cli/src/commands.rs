use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;

use nla_core::analysis::{besov_profile, besov_seminorm_pwp, lq_distance, rate_fit, risk_curve, QuadratureSpec, RateFit, RiskSetting};
use nla_core::oracles::{bundled_target, calibrated_packing_family, fooling_pair, grid_disagreement, PackingParams};
use nla_core::rng::derive_seed;
use nla_core::shrinkage::{estimate_with_report, Regime, ThresholdSchedule};
use nla_core::{build_grid, observe, FunctionOracle, NoiseKind, ObservationSet};

use crate::config::{ExperimentConfig, Format};
use crate::manifest::{sha256_hex, Digester, Environment, Provenance, RunManifest, MANIFEST_FILE};
use crate::suites;
use crate::{CliError, CliResult, Command};

pub struct Context {
    pub config: Option<ExperimentConfig>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub format: Format,
}

impl Context {
    fn config(&self, command: &str) -> CliResult<&ExperimentConfig> {
        self.config
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("{command} needs --config")))
    }
}

/// What a command produced, before the manifest is written.
pub struct RunOutcome {
    pub regime: Option<Regime>,
    pub rows: Vec<Provenance>,
    pub outputs: Vec<PathBuf>,
    pub digest: String,
    /// A fixture or suite check did not hold.
    pub failure: Option<String>,
}

/// Runs `command`, writes its manifest next to its outputs and returns it.
pub fn execute(ctx: &Context, command: &Command) -> CliResult<Option<RunManifest>> {
    let outcome = match command {
        Command::Estimate { observations } => estimate(ctx, observations.as_deref())?,
        Command::SweepM => sweep(ctx, Axis::M)?,
        Command::SweepSigma => sweep(ctx, Axis::Sigma)?,
        Command::Validate { suite } => suites::run(*suite, ctx.seed, ctx.out.as_deref())?,
        Command::Pack { n_cells } => pack(ctx, *n_cells)?,
        Command::Fooling { n } => fooling(ctx, *n)?,
        Command::BesovEstimate { k_max } => besov(ctx, *k_max)?,
        Command::Replay { .. } => return Err(CliError::Run("replay cannot be nested".into())),
    };
    let manifest = match &ctx.out {
        Some(dir) => {
            let mut outputs = BTreeMap::new();
            for path in &outcome.outputs {
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                outputs.insert(name, sha256_hex(&std::fs::read(path)?));
            }
            let manifest = RunManifest {
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.clone(),
                config: ctx.config.clone(),
                seed: ctx.seed,
                format: ctx.format,
                regime: outcome.regime,
                non_primary: outcome.regime == Some(Regime::NonPrimary),
                environment: Environment::current(),
                rows: outcome.rows,
                outputs,
                digest: outcome.digest,
            };
            manifest.write(dir)?;
            Some(manifest)
        }
        None => None,
    };
    match outcome.failure {
        Some(msg) => Err(CliError::Failed(msg)),
        None => Ok(manifest),
    }
}

pub fn replay(path: &Path, out: Option<&Path>) -> CliResult<()> {
    let recorded = RunManifest::read(path)?;
    let dir = match out {
        Some(dir) => dir.to_path_buf(),
        None => path.parent().unwrap_or(Path::new(".")).join("replay"),
    };
    if dir.join(MANIFEST_FILE) == path {
        return Err(CliError::Config("the replay directory must differ from the recorded one".into()));
    }
    let mut config = recorded.config.clone();
    if let Some(cfg) = config.as_mut() {
        cfg.output.directory = dir.clone();
    }
    let ctx = Context {
        config,
        out: Some(dir.clone()),
        seed: recorded.seed,
        format: recorded.format,
    };
    let fresh = execute(&ctx, &recorded.command)?.expect("replay always has an output directory");
    if fresh.digest != recorded.digest {
        return Err(CliError::Failed(format!(
            "replay digest {} differs from recorded {}",
            fresh.digest, recorded.digest
        )));
    }
    println!("replay matches: digest {} ({})", fresh.digest, dir.display());
    Ok(())
}

/// Validates the config, announcing the regime; non-primary runs proceed.
fn checked_regime(cfg: &ExperimentConfig) -> CliResult<Regime> {
    let regime = cfg.validate()?;
    match regime {
        Regime::Primary => info!("{}", ExperimentConfig::regime_note(regime)),
        Regime::NonPrimary => {
            warn!("{}", ExperimentConfig::regime_note(regime));
            eprintln!(
                "WARNING: q = {} is not below p + 2sp/d = {}: {}",
                cfg.problem.q,
                cfg.problem.p + 2.0 * cfg.problem.s * cfg.problem.p / cfg.problem.d as f64,
                ExperimentConfig::regime_note(regime)
            );
        }
    }
    Ok(regime)
}

fn target_oracle(cfg: &ExperimentConfig) -> CliResult<FunctionOracle> {
    let target = bundled_target(&cfg.target.name, cfg.problem.d)?;
    Ok(if cfg.target.scale == 1.0 {
        target.oracle
    } else {
        target.oracle.scaled(cfg.target.scale)
    })
}

fn output_dir(ctx: &Context) -> CliResult<&Path> {
    let dir = ctx.out.as_deref().expect("commands with a config always have an output directory");
    std::fs::create_dir_all(dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<Vec<u8>> {
    let bytes = (serde_json::to_string_pretty(value)? + "\n").into_bytes();
    std::fs::write(path, &bytes)?;
    Ok(bytes)
}

#[derive(Serialize)]
struct EstimateSummary<'a> {
    experiment_id: &'a str,
    /// `step0-zero` when the noise guard returned the zero function.
    status: &'static str,
    regime: Regime,
    n: u32,
    m: usize,
    /// Noise level the estimator used.
    sigma: f64,
    seed: Option<u64>,
    r: usize,
    beta: f64,
    schedule: Option<ThresholdSchedule>,
    zeroed_fraction: Vec<f64>,
    lq_error: Option<f64>,
    estimate_sha256: String,
}

fn estimate(ctx: &Context, observations: Option<&Path>) -> CliResult<RunOutcome> {
    let cfg = ctx.config("estimate")?;
    let regime = checked_regime(cfg)?;
    let dir = output_dir(ctx)?;
    let (obs, truth, seed) = match observations {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let obs: ObservationSet =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            (obs, None, None)
        }
        None => {
            let target = target_oracle(cfg)?;
            let seed = derive_seed(cfg.sweep.seed, &[0, 0]);
            let grid = build_grid(cfg.sweep.n_list[0], cfg.problem.d)?;
            let obs = observe(&target, &grid, cfg.sweep.sigma_list[0], NoiseKind::Gaussian, seed)?;
            (obs, Some(target), Some(seed))
        }
    };
    let est = cfg.estimator_config();
    let start = Instant::now();
    let report = estimate_with_report(&obs, &est)?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let n = obs.grid.n();
    let lq_error = truth
        .as_ref()
        .map(|f| lq_distance(f, &report.output, cfg.problem.q, &QuadratureSpec::for_grid(n)))
        .transpose()?;

    let bin_path = dir.join("estimate.bin");
    let bin = report.output.to_bytes();
    std::fs::write(&bin_path, &bin)?;
    let summary = EstimateSummary {
        experiment_id: &cfg.experiment_id,
        status: if report.step0 { "step0-zero" } else { "estimated" },
        regime,
        n,
        m: obs.m(),
        sigma: report.sigma,
        seed,
        r: est.order(),
        beta: est.resolved_beta()?,
        schedule: report.schedule.clone(),
        zeroed_fraction: report.zeroed_fraction.clone(),
        lq_error,
        estimate_sha256: sha256_hex(&bin),
    };
    let report_path = dir.join("report.json");
    let json = write_json(&report_path, &summary)?;
    match lq_error {
        Some(e) => println!("{}: L_{} error {e:e}", summary.status, cfg.problem.q),
        None => println!("{}", summary.status),
    }
    let mut digest = Digester::default();
    digest.update(&bin);
    digest.update(&json);
    Ok(RunOutcome {
        regime: Some(regime),
        rows: vec![Provenance {
            setting: 0,
            n,
            sigma: obs.sigma,
            trial: 0,
            seed: seed.unwrap_or(obs.seed),
            runtime_ms,
        }],
        outputs: vec![bin_path, report_path],
        digest: digest.finish(),
        failure: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    M,
    Sigma,
}

/// One sweep row; the field order is the column order.
#[derive(Clone, Debug, Serialize)]
struct Row {
    experiment_id: String,
    d: usize,
    s: f64,
    p: f64,
    q: f64,
    r: usize,
    beta: f64,
    kappa: f64,
    n: u32,
    m: usize,
    sigma: f64,
    seed: u64,
    trial: usize,
    lq_error: f64,
    runtime_ms: f64,
}

impl Row {
    /// Every column except the timing.
    fn deterministic_bytes(&self) -> Vec<u8> {
        format!(
            "{}|{}|{:?}|{:?}|{:?}|{}|{:?}|{:?}|{}|{}|{:?}|{}|{}|{:?}",
            self.experiment_id,
            self.d,
            self.s,
            self.p,
            self.q,
            self.r,
            self.beta,
            self.kappa,
            self.n,
            self.m,
            self.sigma,
            self.seed,
            self.trial,
            self.lq_error
        )
        .into_bytes()
    }
}

#[derive(Serialize)]
struct SweepPoint {
    n: u32,
    m: usize,
    sigma: f64,
    x: f64,
    mean: f64,
    std: f64,
    std_error: f64,
}

#[derive(Serialize)]
struct FitSummary {
    experiment_id: String,
    /// `m` or `sigma^2/m`.
    axis: &'static str,
    theoretical_slope: f64,
    fit: Option<RateFit>,
    fit_error: Option<String>,
    points: Vec<SweepPoint>,
}

fn sweep(ctx: &Context, axis: Axis) -> CliResult<RunOutcome> {
    let name = if axis == Axis::M { "sweep-m" } else { "sweep-sigma" };
    let cfg = ctx.config(name)?;
    let regime = checked_regime(cfg)?;
    let (d, s, p, q) = (cfg.problem.d, cfg.problem.s, cfg.problem.p, cfg.problem.q);
    let settings: Vec<RiskSetting> = match axis {
        Axis::M => cfg
            .sweep
            .n_list
            .iter()
            .map(|&n| RiskSetting { n, sigma: cfg.sweep.sigma_list[0] })
            .collect(),
        Axis::Sigma => cfg
            .sweep
            .sigma_list
            .iter()
            .map(|&sigma| RiskSetting { n: cfg.sweep.n_list[0], sigma })
            .collect(),
    };
    if settings.len() < 3 {
        let list = if axis == Axis::M { "sweep.n_list" } else { "sweep.sigma_list" };
        return Err(CliError::Config(format!(
            "≥3 points required for a rate fit, {list} has {}",
            settings.len()
        )));
    }
    if axis == Axis::Sigma && settings.iter().any(|st| st.sigma <= 0.0) {
        return Err(CliError::Config("sweep-sigma needs every sweep.sigma_list entry > 0".into()));
    }
    let dir = output_dir(ctx)?;
    let est = cfg.estimator_config();
    let oracle = target_oracle(cfg)?;
    let points = risk_curve(&est, &oracle, &settings, cfg.sweep.trials, cfg.sweep.seed, NoiseKind::Gaussian)?;

    let (r, beta) = (est.order(), est.resolved_beta()?);
    let mut rows = Vec::new();
    let mut provenance = Vec::new();
    for (i, point) in points.iter().enumerate() {
        for t in &point.trials {
            rows.push(Row {
                experiment_id: cfg.experiment_id.clone(),
                d,
                s,
                p,
                q,
                r,
                beta,
                kappa: est.kappa,
                n: point.setting.n,
                m: point.m,
                sigma: point.setting.sigma,
                seed: t.seed,
                trial: t.trial,
                lq_error: t.lq_error,
                runtime_ms: t.runtime_ms,
            });
            provenance.push(Provenance {
                setting: i,
                n: point.setting.n,
                sigma: point.setting.sigma,
                trial: t.trial,
                seed: t.seed,
                runtime_ms: t.runtime_ms,
            });
        }
    }
    let rows_path = match ctx.format {
        Format::Csv => {
            let path = dir.join("rows.csv");
            let mut writer = csv::Writer::from_path(&path)?;
            for row in &rows {
                writer.serialize(row)?;
            }
            writer.flush()?;
            path
        }
        Format::Json => {
            let path = dir.join("rows.json");
            write_json(&path, &rows)?;
            path
        }
    };

    let x_of = |pt: &nla_core::analysis::RiskPoint| match axis {
        Axis::M => pt.m as f64,
        Axis::Sigma => pt.setting.sigma.powi(2) / pt.m as f64,
    };
    let theoretical_slope = match axis {
        Axis::M => -s / d as f64 + (1.0 / p - 1.0 / q).max(0.0),
        Axis::Sigma => s / (2.0 * s + d as f64),
    };
    let pairs: Vec<(f64, f64)> = points.iter().map(|pt| (x_of(pt), pt.mean)).collect();
    let (fit, fit_error) = match rate_fit(&pairs) {
        Ok(fit) => (Some(fit), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let summary = FitSummary {
        experiment_id: cfg.experiment_id.clone(),
        axis: if axis == Axis::M { "m" } else { "sigma^2/m" },
        theoretical_slope,
        fit,
        fit_error,
        points: points
            .iter()
            .map(|pt| SweepPoint {
                n: pt.setting.n,
                m: pt.m,
                sigma: pt.setting.sigma,
                x: x_of(pt),
                mean: pt.mean,
                std: pt.std,
                std_error: pt.std_error(),
            })
            .collect(),
    };
    let fit_path = dir.join("fit.json");
    let fit_json = write_json(&fit_path, &summary)?;
    match (&summary.fit, &summary.fit_error) {
        (Some(fit), _) => println!(
            "fitted slope {:.4} against log {} (theoretical {:.4}, r^2 {:.4})",
            fit.slope, summary.axis, theoretical_slope, fit.r_squared
        ),
        (None, Some(e)) => println!("no slope fitted ({e}); theoretical {theoretical_slope:.4}"),
        (None, None) => unreachable!(),
    }

    let mut digest = Digester::default();
    for row in &rows {
        digest.update(&row.deterministic_bytes());
    }
    digest.update(&fit_json);
    Ok(RunOutcome {
        regime: Some(regime),
        rows: provenance,
        outputs: vec![rows_path, fit_path],
        digest: digest.finish(),
        failure: None,
    })
}

fn pack(ctx: &Context, n_cells: usize) -> CliResult<RunOutcome> {
    let cfg = ctx.config("pack")?;
    let regime = checked_regime(cfg)?;
    let dir = output_dir(ctx)?;
    let pr = &cfg.problem;
    let params = PackingParams {
        seed: cfg.sweep.seed,
        ..PackingParams::new(n_cells, pr.d, pr.s, pr.p, pr.q, 1.0)
    };
    let family = calibrated_packing_family(&params, 8)?;
    let path = dir.join("packing.json");
    let json = write_json(&path, &family)?;
    println!(
        "packing: {} members on {} cells, min Hamming distance {} (target {}), gamma {:.4e}, max seminorm {:.4}, min separation {:.4e} (bound {:.4e})",
        family.size(),
        family.signs.len,
        family.signs.min_distance,
        family.signs.target_distance,
        family.params.gamma,
        family.max_seminorm,
        family.min_separation,
        family.separation_bound
    );
    let ok = family.signs.min_distance >= family.signs.target_distance
        && family.max_seminorm <= 1.0
        && family.min_separation >= family.separation_bound * (1.0 - 1e-9);
    Ok(RunOutcome {
        regime: Some(regime),
        rows: Vec::new(),
        outputs: vec![path],
        digest: sha256_hex(&json),
        failure: (!ok).then(|| "the packing family did not certify".to_string()),
    })
}

fn fooling(ctx: &Context, n: Option<u32>) -> CliResult<RunOutcome> {
    let cfg = ctx.config("fooling")?;
    let regime = checked_regime(cfg)?;
    let dir = output_dir(ctx)?;
    let levels = n.map(|n| vec![n]).unwrap_or_else(|| cfg.sweep.n_list.clone());
    let mut reports = Vec::new();
    let mut nonzero = Vec::new();
    for n in levels {
        let pair = fooling_pair(&build_grid(n, cfg.problem.d)?, cfg.problem.s, cfg.problem.p, cfg.problem.q)?;
        let disagreement = grid_disagreement(&pair);
        println!(
            "n={n}: separation {:.6e}, constant {:.6}, seminorm {:.4}, grid values {}",
            pair.report.separation,
            pair.report.constant,
            pair.report.seminorm,
            if disagreement == 0.0 { "exactly zero" } else { "NONZERO" }
        );
        if disagreement != 0.0 {
            nonzero.push(n);
        }
        reports.push(pair.report);
    }
    let path = dir.join("fooling.json");
    let json = write_json(&path, &reports)?;
    Ok(RunOutcome {
        regime: Some(regime),
        rows: Vec::new(),
        outputs: vec![path],
        digest: sha256_hex(&json),
        failure: (!nonzero.is_empty()).then(|| format!("fooling pair is nonzero on the grid for n in {nonzero:?}")),
    })
}

#[derive(Serialize)]
struct BesovSummary<'a> {
    target: &'a str,
    s: f64,
    p: f64,
    r: usize,
    k_max: u32,
    /// `(k, 2^(ks) dist(f, S_k(r))_p)`.
    profile: Vec<(u32, f64)>,
    seminorm: f64,
}

fn besov(ctx: &Context, k_max: u32) -> CliResult<RunOutcome> {
    let cfg = ctx.config("besov-estimate")?;
    let regime = checked_regime(cfg)?;
    let dir = output_dir(ctx)?;
    let oracle = target_oracle(cfg)?;
    let (s, p) = (cfg.problem.s, cfg.problem.p);
    let r = cfg.estimator_config().order();
    let spec = QuadratureSpec::new(k_max + 2, 4);
    let summary = BesovSummary {
        target: &cfg.target.name,
        s,
        p,
        r,
        k_max,
        profile: besov_profile(&oracle, s, p, r, k_max, &spec)?,
        seminorm: besov_seminorm_pwp(&oracle, s, p, r, k_max, &spec)?,
    };
    for (k, v) in &summary.profile {
        println!("k={k}: {v:.6e}");
    }
    println!("seminorm estimate {:.6e}", summary.seminorm);
    let path = dir.join("besov.json");
    let json = write_json(&path, &summary)?;
    Ok(RunOutcome {
        regime: Some(regime),
        rows: Vec::new(),
        outputs: vec![path],
        digest: sha256_hex(&json),
        failure: None,
    })
}
