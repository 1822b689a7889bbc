//! Checks for hard thresholding: the pointwise lemma, the deterministic
//! bound on whole coefficient vectors, and Monte Carlo tails of the
//! thresholded noise norm.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiscale::weighted_norm;
use crate::rng::stream;
use crate::shrinkage::hard_threshold;

pub const MIN_TAIL_TRIALS: usize = 1000;

/// Relative slack for comparisons of norms that agree mathematically but are
/// rounded along different paths.
const ROUNDING_SLACK: f64 = 1e-12;

/// The noise part kept by a threshold `lambda`: `xi` where `|xi| >= lambda/2`, else 0.
pub fn noise_part(xi: f64, lambda: f64) -> f64 {
    if xi.abs() >= 0.5 * lambda {
        xi
    } else {
        0.0
    }
}

/// `|thresh_lambda(x + eps) - x| <= 3 (min(|x|, lambda) + |noise_part(eps, lambda)|)`.
pub fn check_pointwise_thresh(x: f64, eps: f64, lambda: f64) -> bool {
    let lhs = (hard_threshold(x + eps, lambda) - x).abs();
    let rhs = 3.0 * (x.abs().min(lambda) + noise_part(eps, lambda).abs());
    lhs <= rhs
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterministicBound {
    /// `||nu - thresh_lambda(nu + xi)||*_q`.
    pub error: f64,
    /// `3 (||min(|nu|, lambda)||*_q + ||xi_lambda||*_q)`.
    pub split: f64,
    /// `3 ((||nu||*_p)^(p/q) lambda^(1-p/q) + ||xi_lambda||*_q)`.
    pub bound: f64,
    pub holds: bool,
}

/// Evaluates the chain `error <= split <= bound` for one coefficient vector.
pub fn check_deterministic_bound(nu: &[f64], xi: &[f64], lambda: f64, p: f64, q: f64) -> Result<DeterministicBound> {
    if nu.len() != xi.len() {
        return Err(Error::LengthMismatch { expected: nu.len(), found: xi.len() });
    }
    if !(lambda >= 0.0 && p > 0.0 && p <= q && q >= 1.0 && q.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need lambda >= 0 and 0 < p <= q < inf with q >= 1, got ({lambda}, {p}, {q})"
        )));
    }
    let residual: Vec<f64> = nu.iter().zip(xi).map(|(&v, &e)| v - hard_threshold(v + e, lambda)).collect();
    let capped: Vec<f64> = nu.iter().map(|v| v.abs().min(lambda)).collect();
    let kept_noise: Vec<f64> = xi.iter().map(|&e| noise_part(e, lambda)).collect();
    let error = weighted_norm(&residual, q);
    let noise = weighted_norm(&kept_noise, q);
    let split = 3.0 * (weighted_norm(&capped, q) + noise);
    let bound = 3.0 * (weighted_norm(nu, p).powf(p / q) * lambda.powf(1.0 - p / q) + noise);
    let slack = 1.0 + ROUNDING_SLACK;
    Ok(DeterministicBound {
        error,
        split,
        bound,
        holds: error <= split * slack && split <= bound * slack,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomCheckSummary {
    pub checked: usize,
    pub violations: usize,
}

/// Deterministic-bound checks on random instances: lengths 1..=64, heavy-tailed
/// coefficients with 30% exact zeros, Gaussian noise, `lambda` in `[0, 3)` and
/// `p <= q` with `q` in `[1, 4]`, all on a random scale in `[10^-2, 10^2)`.
/// Instance `i` draws from the stream `(seed, [i])`.
pub fn random_bound_checks(instances: usize, seed: u64) -> Result<RandomCheckSummary> {
    let outcomes = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &[i as u64]);
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
            check_deterministic_bound(&nu, &xi, lambda, p, q).map(|b| b.holds)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(RandomCheckSummary {
        checked: instances,
        violations: outcomes.iter().filter(|&&ok| !ok).count(),
    })
}

/// Pointwise-lemma checks on random triples; every tenth triple sits exactly on
/// the `|x| = |eps| = lambda/2` boundary.
pub fn random_pointwise_checks(triples: usize, seed: u64) -> RandomCheckSummary {
    let violations = (0..triples)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = stream(seed, &[i as u64]);
            let lambda: f64 = rng.random_range(0.0..4.0);
            let (x, eps) = if i % 10 == 0 {
                let sign = |b: bool| if b { 0.5 } else { -0.5 };
                (sign(rng.random()) * lambda, sign(rng.random()) * lambda)
            } else {
                let w = lambda.max(0.1);
                (rng.random_range(-3.0..3.0) * w, rng.random_range(-3.0..3.0) * w)
            };
            !check_pointwise_thresh(x, eps, lambda)
        })
        .count();
    RandomCheckSummary { checked: triples, violations }
}

/// `C T^-q sigma^q exp(-(b/sigma)^2 / 4)` with `b = max(lambda/2, 2^(-1/q) T)`.
pub fn tail_envelope(t: f64, lambda: f64, sigma_tilde: f64, q: f64, c_env: f64) -> Result<f64> {
    if !(t > 0.0 && sigma_tilde > 0.0) {
        return Err(Error::Precondition(format!("need T > 0 and sigma > 0, got ({t}, {sigma_tilde})")));
    }
    let b = envelope_b(t, lambda, q);
    Ok(c_env * (sigma_tilde / t).powf(q) * (-(b / sigma_tilde).powi(2) / 4.0).exp())
}

pub fn envelope_b(t: f64, lambda: f64, q: f64) -> f64 {
    (0.5 * lambda).max((-1.0 / q).exp2() * t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    pub exceed: usize,
    pub frequency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailTable {
    pub lambda: f64,
    pub sigma_tilde: f64,
    pub len: usize,
    pub q: f64,
    pub trials: usize,
    pub rows: Vec<TailRow>,
}

/// `||xi_lambda||*_q` for a raw noise vector.
pub fn thresholded_noise_norm(xi: &[f64], lambda: f64, q: f64) -> f64 {
    let sum: f64 = xi.iter().map(|&e| noise_part(e, lambda).abs().powf(q)).sum();
    (sum / xi.len() as f64).powf(1.0 / q)
}

/// [`mc_tail_shared`] for a single threshold.
pub fn mc_tail(lambda: f64, sigma_tilde: f64, len: usize, q: f64, t_grid: &[f64], trials: usize, seed: u64) -> Result<TailTable> {
    Ok(mc_tail_shared(&[lambda], sigma_tilde, len, q, t_grid, trials, seed)?.remove(0))
}

/// Exceedance frequencies of `||xi_lambda||*_q >= T` for `xi ~ N(0, sigma^2 I_len)`.
/// All thresholds are applied to the same draws; trial `t` uses the stream
/// `(seed, [t])`.
pub fn mc_tail_shared(
    lambdas: &[f64],
    sigma_tilde: f64,
    len: usize,
    q: f64,
    t_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<TailTable>> {
    if trials < MIN_TAIL_TRIALS {
        return Err(Error::Precondition(format!("need at least {MIN_TAIL_TRIALS} trials, got {trials}")));
    }
    if len == 0 || !(q >= 1.0 && q.is_finite()) || !(sigma_tilde >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need len >= 1, 1 <= q < inf, sigma >= 0; got ({len}, {q}, {sigma_tilde})"
        )));
    }
    let norms: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map_init(
            || vec![0.0; len],
            |xi, t| {
                let mut rng = stream(seed, &[t as u64]);
                for e in xi.iter_mut() {
                    *e = sigma_tilde * rng.sample::<f64, _>(StandardNormal);
                }
                lambdas.iter().map(|&l| thresholded_noise_norm(xi, l, q)).collect()
            },
        )
        .collect();
    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(j, &lambda)| TailTable {
            lambda,
            sigma_tilde,
            len,
            q,
            trials,
            rows: t_grid
                .iter()
                .map(|&t| {
                    let exceed = norms.iter().filter(|v| v[j] >= t).count();
                    TailRow {
                        t,
                        exceed,
                        frequency: exceed as f64 / trials as f64,
                    }
                })
                .collect(),
        })
        .collect())
}

/// Smallest `C` with `frequency <= tail_envelope(T, .., C)` on every row.
pub fn calibrate_envelope(table: &TailTable) -> Result<f64> {
    table.rows.iter().filter(|r| r.t > 0.0).try_fold(0.0f64, |c, row| {
        let shape = tail_envelope(row.t, table.lambda, table.sigma_tilde, table.q, 1.0)?;
        Ok(c.max(row.frequency / shape))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSlope {
    /// Least-squares slope of `ln(frequency)` against `(b/sigma)^2`; `-inf`
    /// when `b` is pinned at `lambda/2` across the window while the
    /// frequency still falls.
    pub slope: f64,
    pub points: usize,
    pub b_spread: f64,
}

/// Slope over the rows with `lo <= frequency <= hi`.
pub fn tail_slope(table: &TailTable, lo: f64, hi: f64) -> Result<TailSlope> {
    let pts: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| r.frequency >= lo && r.frequency <= hi)
        .map(|r| ((envelope_b(r.t, table.lambda, table.q) / table.sigma_tilde).powi(2), r.frequency.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::TooFewPoints { required: 2, found: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b_spread = pts.iter().map(|p| p.0).fold(f64::MIN, f64::max) - pts.iter().map(|p| p.0).fold(f64::MAX, f64::min);
    let slope = if b_spread <= 1e-12 * mx.abs().max(1.0) {
        let falls = pts.first().unwrap().1 > pts.last().unwrap().1;
        if falls {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    } else {
        sxy / sxx
    };
    Ok(TailSlope {
        slope,
        points: pts.len(),
        b_spread,
    })
}
