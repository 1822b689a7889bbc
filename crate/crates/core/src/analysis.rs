//! Error norms, finite differences and moduli of smoothness, piecewise
//! polynomial Besov seminorm estimates, power-law fits and risk curves.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_obs::{build_grid, observe, NoiseKind, RealFunction};
use crate::multiscale::DyadicCube;
use crate::polybasis::{reference_basis, PolySpaceSpec, ReferenceBasis};
use crate::quadrature::{for_each_tensor_node, UnitRule};
use crate::rng::{derive_seed, stream};
use crate::shrinkage::{estimate, EstimatorConfig};

/// Composite quadrature on `2^level` cells per axis with `nodes` Gauss points
/// per cell. Sup-norms use the closed uniform grid with `2^(level+1)`
/// intervals per axis instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub level: u32,
    pub nodes: usize,
}

impl QuadratureSpec {
    pub fn new(level: u32, nodes: usize) -> Self {
        Self { level, nodes }
    }

    /// Resolution for comparing against an estimate built from `G_n`:
    /// level `n + 2`, and so level `n + 3` for sup-norms.
    pub fn for_grid(n: u32) -> Self {
        Self { level: n + 2, nodes: 4 }
    }

    pub fn sup_intervals(&self) -> usize {
        1 << (self.level + 1)
    }
}

/// Sum of `values` computed in a fixed order, independent of thread count.
fn ordered_sum(parts: Vec<f64>) -> f64 {
    parts.into_iter().sum()
}

/// `||f - g||_{L_q((0,1)^d)}` for `q >= 1`, `q = inf` included.
pub fn lq_distance(f: &dyn RealFunction, g: &dyn RealFunction, q: f64, spec: &QuadratureSpec) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {} vs {}",
            f.dim(),
            g.dim()
        )));
    }
    if !(q >= 1.0) {
        return Err(Error::InvalidArgument(format!("L_q distances need q >= 1, got {q}")));
    }
    let d = f.dim();
    let lo = vec![0.0; d];
    let width = vec![1.0; d];
    box_norm(&|x: &[f64]| f.eval(x) - g.eval(x), &lo, &width, q, spec)
}

/// `||f||_{L_q((0,1)^d)}`.
pub fn lq_norm(f: &dyn RealFunction, q: f64, spec: &QuadratureSpec) -> Result<f64> {
    let d = f.dim();
    box_norm(&|x: &[f64]| f.eval(x), &vec![0.0; d], &vec![1.0; d], q, spec)
}

/// `L_q` norm of `h` over the box `[lo, lo + width]`, split in slabs along the
/// first axis for parallelism.
fn box_norm(
    h: &(dyn Fn(&[f64]) -> f64 + Sync),
    lo: &[f64],
    width: &[f64],
    q: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let d = lo.len();
    if width.iter().any(|&w| w <= 0.0) {
        return Ok(0.0);
    }
    if q.is_infinite() {
        let k = spec.sup_intervals();
        let rest = UnitRule::uniform_closed(k);
        let maxima: Vec<f64> = (0..=k)
            .into_par_iter()
            .map(|i| {
                let x0 = lo[0] + width[0] * i as f64 / k as f64;
                let mut x = vec![0.0; d];
                let mut best = 0.0f64;
                for_each_tensor_node(&rest, &lo[1..], &width[1..], |y, _| {
                    x[0] = x0;
                    x[1..].copy_from_slice(y);
                    best = best.max(h(&x).abs());
                });
                best
            })
            .collect();
        return Ok(maxima.into_iter().fold(0.0, f64::max));
    }
    let cells = 1usize << spec.level;
    let local = UnitRule::composite(spec.nodes, 1);
    let rest = UnitRule::composite(spec.nodes, cells);
    let slab = width[0] / cells as f64;
    let parts: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|i| {
            let a = lo[0] + i as f64 * slab;
            let mut x = vec![0.0; d];
            let mut acc = 0.0;
            for &(t, w0) in &local.pairs {
                x[0] = a + slab * t;
                for_each_tensor_node(&rest, &lo[1..], &width[1..], |y, w| {
                    x[1..].copy_from_slice(y);
                    acc += slab * w0 * w * h(&x).abs().powf(q);
                });
            }
            acc
        })
        .collect();
    Ok(ordered_sum(parts).powf(1.0 / q))
}

fn binomial(n: usize, k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * (n + 1 - i) as f64 / i as f64)
}

fn in_closed_cube(x: &[f64]) -> bool {
    x.iter().all(|&v| (0.0..=1.0).contains(&v))
}

/// `Delta_h^r f(x) = sum_k (-1)^(r-k) binom(r, k) f(x + k h)`.
pub fn r_th_difference(f: &dyn RealFunction, x: &[f64], h: &[f64], r: usize) -> Result<f64> {
    let end: Vec<f64> = x.iter().zip(h).map(|(a, b)| a + r as f64 * b).collect();
    if !in_closed_cube(x) || !in_closed_cube(&end) {
        return Err(Error::SegmentOutsideDomain);
    }
    Ok(difference_unchecked(f, x, h, r, &mut vec![0.0; x.len()]))
}

fn difference_unchecked(f: &dyn RealFunction, x: &[f64], h: &[f64], r: usize, buf: &mut [f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..=r {
        for ((b, &a), &s) in buf.iter_mut().zip(x).zip(h) {
            *b = a + k as f64 * s;
        }
        let sign = if (r - k) % 2 == 0 { 1.0 } else { -1.0 };
        acc += sign * binomial(r, k) * f.eval(buf);
    }
    acc
}

/// Sampling of shifts `h` and of `x` for [`modulus`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusBudget {
    /// Directions on the half sphere (ignored for `d = 1`).
    pub directions: usize,
    /// Lengths `t j / lengths`, `j = 1..=lengths`.
    pub lengths: usize,
    pub quadrature: QuadratureSpec,
}

impl Default for ModulusBudget {
    fn default() -> Self {
        Self {
            directions: 8,
            lengths: 16,
            quadrature: QuadratureSpec::new(8, 3),
        }
    }
}

fn directions(d: usize, count: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0]],
        2 => (0..count.max(1))
            .map(|j| {
                let a = std::f64::consts::PI * j as f64 / count.max(1) as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            use rand::Rng;
            use rand_distr::StandardNormal;
            let mut rng = stream(0x6d6f_6475_6c75_73, &[d as u64]);
            (0..count.max(1))
                .map(|_| {
                    let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    v.into_iter().map(|a| a / norm).collect()
                })
                .collect()
        }
    }
}

/// Lower estimate of `omega_r(f, t)_p = sup_{|h| <= t} ||Delta_h^r f||_{L_p(Omega_{rh})}`
/// from a finite set of shifts.
pub fn modulus(f: &dyn RealFunction, r: usize, t: f64, p: f64, budget: &ModulusBudget) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("t must be > 0, got {t}")));
    }
    if !(p >= crate::polybasis::Q_FLOOR) {
        return Err(Error::InvalidArgument(format!("p = {p} is below the floor")));
    }
    let d = f.dim();
    let mut best = 0.0f64;
    for dir in directions(d, budget.directions) {
        for j in 1..=budget.lengths {
            let len = t * j as f64 / budget.lengths as f64;
            let h: Vec<f64> = dir.iter().map(|c| c * len).collect();
            let mut lo = vec![0.0; d];
            let mut width = vec![0.0; d];
            for a in 0..d {
                let shift = r as f64 * h[a];
                lo[a] = (-shift).max(0.0);
                width[a] = (1.0 - shift).min(1.0) - lo[a];
            }
            if width.iter().any(|&w| w <= 0.0) {
                continue;
            }
            let value = box_norm(
                &|x: &[f64]| difference_unchecked(f, x, &h, r, &mut vec![0.0; d]),
                &lo,
                &width,
                p,
                &budget.quadrature,
            )?;
            best = best.max(value);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessProfile {
    pub r: usize,
    pub p: f64,
    /// `(k, omega_r(f, 2^-k)_p)`.
    pub values: Vec<(u32, f64)>,
}

pub fn smoothness_profile(
    f: &dyn RealFunction,
    r: usize,
    p: f64,
    levels: std::ops::RangeInclusive<u32>,
    budget: &ModulusBudget,
) -> Result<SmoothnessProfile> {
    let values = levels
        .map(|k| Ok((k, modulus(f, r, (-(k as f64)).exp2(), p, budget)?)))
        .collect::<Result<_>>()?;
    Ok(SmoothnessProfile { r, p, values })
}

/// Error of the best `L_p` approximation from `P_r` on one cube, as a
/// normalized quantity `|I|^(-1/p) ||f - P||_{L_p(I)}` (max for `p = inf`).
///
/// `p = 2` is weighted least squares at Gauss nodes, `p = inf` is Lawson's
/// iteration on a closed uniform grid (stopped at relative gap `1e-4` between
/// its upper and lower bounds), and other `p` use iteratively reweighted
/// least squares with tolerance `1e-8`.
pub fn best_local_error(f: &dyn RealFunction, cube: &DyadicCube, r: usize, p: f64, resolution: usize, nodes: usize) -> Result<f64> {
    let d = cube.dim();
    let spec = PolySpaceSpec::new(r, d)?;
    let basis = reference_basis(spec, r + 1)?;
    let geometry = cube.as_cube();
    let rule = if p.is_infinite() {
        UnitRule::uniform_closed(resolution * nodes)
    } else {
        UnitRule::composite(nodes, resolution)
    };
    let lo = vec![0.0; d];
    let width = vec![1.0; d];
    let mut rows = Vec::new();
    let mut values = Vec::new();
    let mut weights = Vec::new();
    let mut x = vec![0.0; d];
    for_each_tensor_node(&rule, &lo, &width, |u, w| {
        geometry.from_reference(u, &mut x);
        values.push(f.eval(&x));
        weights.push(w);
        let mut q = vec![0.0; spec.rho];
        basis.eval_all(u, &mut q);
        rows.extend(q);
    });
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let design = DMatrix::from_row_slice(values.len(), spec.rho, &rows);
    let target = DVector::from_vec(values);
    if p.is_infinite() {
        lawson(&design, &target, weights)
    } else if p == 2.0 {
        let c = weighted_ls(&design, &target, &weights)?;
        Ok(weighted_lp(&(&target - &design * c), &weights, 2.0))
    } else {
        irls(&design, &target, &weights, p)
    }
}

fn weighted_ls(a: &DMatrix<f64>, b: &DVector<f64>, w: &[f64]) -> Result<DVector<f64>> {
    let rho = a.ncols();
    let mut gram = DMatrix::<f64>::zeros(rho, rho);
    let mut rhs = DVector::<f64>::zeros(rho);
    for (i, &wi) in w.iter().enumerate() {
        if wi == 0.0 {
            continue;
        }
        let row = a.row(i);
        for j in 0..rho {
            rhs[j] += wi * row[j] * b[i];
            for k in 0..=j {
                gram[(j, k)] += wi * row[j] * row[k];
            }
        }
    }
    for j in 0..rho {
        for k in 0..j {
            gram[(k, j)] = gram[(j, k)];
        }
    }
    // A tiny ridge keeps degenerate weightings (mass on few points) solvable.
    let scale = (0..rho).map(|j| gram[(j, j)]).fold(0.0, f64::max).max(1e-300);
    for j in 0..rho {
        gram[(j, j)] += 1e-14 * scale;
    }
    let chol = gram
        .cholesky()
        .ok_or(Error::RankDeficient { min_eigenvalue: 0.0 })?;
    Ok(chol.solve(&rhs))
}

fn weighted_lp(e: &DVector<f64>, w: &[f64], p: f64) -> f64 {
    e.iter()
        .zip(w)
        .map(|(v, wi)| wi * v.abs().powf(p))
        .sum::<f64>()
        .powf(1.0 / p)
}

fn lawson(a: &DMatrix<f64>, b: &DVector<f64>, mut w: Vec<f64>) -> Result<f64> {
    let scale = b.amax().max(1e-300);
    let mut best_upper = f64::INFINITY;
    for _ in 0..20_000 {
        let c = weighted_ls(a, b, &w)?;
        let e = b - a * c;
        let upper = e.amax();
        let lower = weighted_lp(&e, &w, 2.0);
        best_upper = best_upper.min(upper);
        if best_upper - lower <= 1e-4 * best_upper || best_upper <= 1e-13 * scale {
            break;
        }
        let norm: f64 = w.iter().zip(e.iter()).map(|(wi, ei)| wi * ei.abs()).sum();
        if norm == 0.0 {
            break;
        }
        for (wi, ei) in w.iter_mut().zip(e.iter()) {
            *wi *= ei.abs() / norm;
        }
    }
    Ok(best_upper)
}

fn irls(a: &DMatrix<f64>, b: &DVector<f64>, w: &[f64], p: f64) -> Result<f64> {
    if b.amax() == 0.0 {
        return Ok(0.0);
    }
    let mut c = weighted_ls(a, b, w)?;
    let mut previous = weighted_lp(&(b - a * &c), w, p);
    let floor = (1e-12 * b.amax()).max(1e-150);
    for _ in 0..500 {
        let e = b - a * &c;
        let reweighted: Vec<f64> = w
            .iter()
            .zip(e.iter())
            .map(|(wi, ei)| wi * (ei * ei + floor * floor).powf((p - 2.0) / 2.0))
            .collect();
        let next = weighted_ls(a, b, &reweighted)?;
        let value = weighted_lp(&(b - a * &next), w, p);
        if value <= previous {
            c = next;
        }
        if (previous - value).abs() <= 1e-8 * previous.max(1e-300) {
            previous = previous.min(value);
            break;
        }
        previous = previous.min(value);
    }
    Ok(previous)
}

/// `dist(f, S_k(r))_{L_p(Omega)}` by per-cube best fits. Each cube is sampled
/// with `2^(spec.level - k)` cells per axis (at least 4).
pub fn pwp_distance(f: &dyn RealFunction, k: u32, r: usize, p: f64, spec: &QuadratureSpec) -> Result<f64> {
    let d = f.dim();
    let count = 1usize << (k as usize * d);
    let resolution = 1usize << spec.level.saturating_sub(k).max(2);
    let local: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|lex| best_local_error(f, &DyadicCube::from_lex(k, d, lex), r, p, resolution, spec.nodes))
        .collect::<Result<_>>()?;
    if p.is_infinite() {
        return Ok(local.into_iter().fold(0.0, f64::max));
    }
    let volume = (-((k as usize * d) as f64)).exp2();
    Ok(ordered_sum(local.into_iter().map(|e| volume * e.powf(p)).collect()).powf(1.0 / p))
}

/// `(k, 2^(ks) dist(f, S_k(r))_p)` for `k = 0..=k_max`.
pub fn besov_profile(f: &dyn RealFunction, s: f64, p: f64, r: usize, k_max: u32, spec: &QuadratureSpec) -> Result<Vec<(u32, f64)>> {
    (0..=k_max)
        .map(|k| Ok((k, (k as f64 * s).exp2() * pwp_distance(f, k, r, p, spec)?)))
        .collect()
}

/// `max_{k <= k_max} 2^(ks) dist(f, S_k(r))_p`.
pub fn besov_seminorm_pwp(f: &dyn RealFunction, s: f64, p: f64, r: usize, k_max: u32, spec: &QuadratureSpec) -> Result<f64> {
    if !(r as f64 > s) {
        return Err(Error::Precondition(format!("need r > s, got r = {r}, s = {s}")));
    }
    if k_max < 2 {
        return Err(Error::Precondition(format!("need k_max >= 2, got {k_max}")));
    }
    Ok(besov_profile(f, s, p, r, k_max, spec)?
        .into_iter()
        .map(|(_, v)| v)
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(log x, log y)`.
    pub log_pairs: Vec<(f64, f64)>,
}

/// Least-squares line through `(log x, log y)`.
pub fn rate_fit(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::TooFewPoints {
            required: 3,
            found: pairs.len(),
        });
    }
    if let Some(&(x, y)) = pairs.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::NonPositive { x, y });
    }
    let logs: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        log_pairs: logs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskSetting {
    pub n: u32,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub lq_error: f64,
    pub runtime_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    pub setting: RiskSetting,
    pub m: usize,
    pub mean: f64,
    /// Sample standard deviation over trials (0 for a single trial).
    pub std: f64,
    pub trials: Vec<TrialRecord>,
}

impl RiskPoint {
    pub fn std_error(&self) -> f64 {
        self.std / (self.trials.len() as f64).sqrt()
    }
}

/// Monte Carlo risk `E ||f - A(y)||_{L_q}` for each setting. Trial `t` of
/// setting `i` observes with seed `derive_seed(seed, [i, t])`; the estimator is
/// told the true sigma of its setting. Rows come back in (setting, trial)
/// order whatever the scheduling.
pub fn risk_curve(
    config: &EstimatorConfig,
    oracle: &dyn RealFunction,
    settings: &[RiskSetting],
    trials: usize,
    seed: u64,
    noise: NoiseKind,
) -> Result<Vec<RiskPoint>> {
    if trials < 1 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    config.validate()?;
    let jobs: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|i| (0..trials).map(move |t| (i, t)))
        .collect();
    let records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let setting = settings[i];
            let start = Instant::now();
            let grid = build_grid(setting.n, config.d)?;
            let trial_seed = derive_seed(seed, &[i as u64, t as u64]);
            let obs = observe(oracle, &grid, setting.sigma, noise, trial_seed)?;
            let cfg = EstimatorConfig {
                sigma: Some(setting.sigma),
                ..config.clone()
            };
            let f_hat = estimate(&obs, &cfg)?;
            let lq_error = lq_distance(oracle, &f_hat, config.q, &QuadratureSpec::for_grid(setting.n))?;
            Ok(TrialRecord {
                trial: t,
                seed: trial_seed,
                lq_error,
                runtime_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect::<Result<_>>()?;
    Ok(settings
        .iter()
        .zip(records.chunks(trials))
        .map(|(&setting, chunk)| {
            let errors: Vec<f64> = chunk.iter().map(|r| r.lq_error).collect();
            let (mean, std) = mean_std(&errors);
            RiskPoint {
                setting,
                m: 1usize << (setting.n as usize * config.d),
                mean,
                std,
                trials: chunk.to_vec(),
            }
        })
        .collect())
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Reference basis used for local best fits (exposed for diagnostics).
pub fn fit_basis(r: usize, d: usize) -> Result<std::sync::Arc<ReferenceBasis>> {
    reference_basis(PolySpaceSpec::new(r, d)?, r + 1)
}
