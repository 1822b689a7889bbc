//! Threshold schedule and the end-to-end estimator.
//!
//! With `eps = (sigma^2/m)^(s/(2s+d))` and `k*` the level where
//! `2^(k*-1) <= eps^(-1/s) < 2^k*`, coefficients on levels `k <= k*` are kept
//! as observed and level `k > k*` is hard-thresholded at
//! `kappa 2^(-k* s) 2^(beta (k - k*))`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_obs::ObservationSet;
use crate::multiscale::{decompose, reconstruct, CoefficientVector, MultiscaleDecomposition, PiecewisePoly};
use crate::polybasis::PolySpaceSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub s: f64,
    pub p: f64,
    pub q: f64,
    pub d: usize,
    /// Polynomial order; defaults to the smallest integer above `s`.
    #[serde(default)]
    pub r: Option<usize>,
    /// Threshold growth exponent; see [`EstimatorConfig::beta_interval`].
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "one")]
    pub kappa: f64,
    /// Known noise level; falls back to the observation set's own sigma.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Radius `M` of the Besov ball.
    #[serde(default = "one")]
    pub norm_scale: f64,
    /// Secondary Besov index. Recorded only, the estimator does not use it.
    #[serde(default)]
    pub tau: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `q < p + 2sp/d`.
    Primary,
    NonPrimary,
}

impl EstimatorConfig {
    pub fn new(s: f64, p: f64, q: f64, d: usize) -> Self {
        Self {
            s,
            p,
            q,
            d,
            r: None,
            beta: None,
            kappa: 1.0,
            sigma: None,
            norm_scale: 1.0,
            tau: None,
        }
    }

    pub fn order(&self) -> usize {
        self.r.unwrap_or(self.s.floor() as usize + 1)
    }

    pub fn p_eff(&self) -> f64 {
        self.p.min(self.q)
    }

    /// `(d/2, s p_eff / (q - p_eff))`; the upper end is infinite when `p >= q`.
    pub fn beta_interval(&self) -> (f64, f64) {
        let lo = self.d as f64 / 2.0;
        let pe = self.p_eff();
        let hi = if self.q > pe {
            self.s * pe / (self.q - pe)
        } else {
            f64::INFINITY
        };
        (lo, hi)
    }

    pub fn regime(&self) -> Regime {
        if self.q < self.p + 2.0 * self.s * self.p / self.d as f64 {
            Regime::Primary
        } else {
            Regime::NonPrimary
        }
    }

    /// Checks parameter ranges and the compact embedding `s > d/p`.
    pub fn validate(&self) -> Result<Regime> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("s", self.s)?;
        positive("p", self.p)?;
        positive("kappa", self.kappa)?;
        positive("norm_scale", self.norm_scale)?;
        if self.d < 1 {
            return Err(Error::InvalidArgument("d must be >= 1".into()));
        }
        if !(self.q >= 1.0 && self.q.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "error exponent q must lie in [1, inf), got {}",
                self.q
            )));
        }
        if let Some(sigma) = self.sigma {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
            }
        }
        if self.order() < 1 {
            return Err(Error::InvalidArgument("polynomial order r must be >= 1".into()));
        }
        let bound = self.d as f64 / self.p;
        if !(self.s > bound) {
            return Err(Error::CompactEmbedding { s: self.s, bound });
        }
        self.resolved_beta()?;
        Ok(self.regime())
    }

    /// The configured `beta` after validation, or the default
    /// `min(d/2 + s, midpoint)` of the admissible interval.
    pub fn resolved_beta(&self) -> Result<f64> {
        let (lo, hi) = self.beta_interval();
        let nonempty = hi > lo;
        match self.beta {
            Some(beta) => {
                let ok = if nonempty {
                    beta > lo && beta < hi
                } else {
                    beta > lo && beta.is_finite()
                };
                if ok {
                    Ok(beta)
                } else {
                    Err(Error::InvalidBeta { beta, lo, hi })
                }
            }
            None if nonempty => Ok((lo + self.s).min(0.5 * (lo + hi))),
            None => Ok(lo + self.s),
        }
    }
}

/// `(sigma^2 / m)^(s / (2s + d))`.
pub fn epsilon(sigma: f64, m: usize, s: f64, d: usize) -> f64 {
    (sigma * sigma / m as f64).powf(s / (2.0 * s + d as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KStar {
    Finite(u32),
    /// Noiseless case: no level is thresholded.
    Infinite,
}

/// The integer `k*` with `2^(k*-1) <= eps^(-1/s) < 2^k*`.
pub fn k_star(eps: f64, s: f64) -> Result<KStar> {
    if eps == 0.0 {
        return Ok(KStar::Infinite);
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::EpsilonDomain(eps));
    }
    let log_x = -eps.log2() / s;
    let k = log_x.floor() + 1.0;
    Ok(KStar::Finite(k.min(u32::MAX as f64 / 2.0) as u32))
}

/// `kappa 2^(-k* s) 2^(beta (k - k*))` above `k*`, zero at or below it.
pub fn level_threshold(k: u32, k_star: KStar, s: f64, beta: f64, kappa: f64) -> f64 {
    match k_star {
        KStar::Finite(ks) if k > ks => {
            kappa * (-(ks as f64) * s).exp2() * (beta * (k - ks) as f64).exp2()
        }
        _ => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    pub epsilon: f64,
    pub k_star: KStar,
    pub beta: f64,
    pub kappa: f64,
    /// Ball radius the thresholds were scaled by.
    pub norm_scale: f64,
    /// Thresholds `lambda_0 .. lambda_{n-r}` on the scale of the observations.
    pub lambdas: Vec<f64>,
}

impl ThresholdSchedule {
    /// Thresholds for the unit ball, i.e. `lambdas / norm_scale`.
    pub fn unit_lambdas(&self) -> Vec<f64> {
        self.lambdas.iter().map(|l| l / self.norm_scale).collect()
    }
}

fn noise_level(config: &EstimatorConfig, obs_sigma: f64) -> f64 {
    config.sigma.unwrap_or(obs_sigma)
}

/// Thresholds for a grid of level `n`, using the configured sigma (or 0).
pub fn schedule(config: &EstimatorConfig, n: u32) -> Result<ThresholdSchedule> {
    schedule_with_sigma(config, n, config.sigma.unwrap_or(0.0))
}

fn schedule_with_sigma(config: &EstimatorConfig, n: u32, sigma: f64) -> Result<ThresholdSchedule> {
    config.validate()?;
    let r = config.order();
    let k_max = n as i64 - r as i64;
    if k_max < 1 {
        return Err(Error::Precondition(format!("need n >= r + 1, got n = {n}, r = {r}")));
    }
    let m = 1usize
        .checked_shl(n * config.d as u32)
        .ok_or_else(|| Error::InvalidArgument("grid too large".into()))?;
    let scaled_sigma = sigma / config.norm_scale;
    let eps = epsilon(scaled_sigma, m, config.s, config.d);
    let ks = k_star(eps, config.s)?;
    let beta = config.resolved_beta()?;
    let lambdas = (0..=k_max as u32)
        .map(|k| config.norm_scale * level_threshold(k, ks, config.s, beta, config.kappa))
        .collect();
    Ok(ThresholdSchedule {
        epsilon: eps,
        k_star: ks,
        beta,
        kappa: config.kappa,
        norm_scale: config.norm_scale,
        lambdas,
    })
}

/// `x` if `|x| > lambda`, else 0.
pub fn hard_threshold(x: f64, lambda: f64) -> f64 {
    if x.abs() > lambda {
        x
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdedLevel {
    pub coefficients: CoefficientVector,
    pub zeroed: usize,
}

impl ThresholdedLevel {
    pub fn zeroed_fraction(&self) -> f64 {
        self.zeroed as f64 / self.coefficients.len().max(1) as f64
    }
}

pub fn threshold_level(nu_star: &CoefficientVector, lambda: f64) -> ThresholdedLevel {
    let mut out = nu_star.clone();
    let mut zeroed = 0;
    for e in out.entries.iter_mut() {
        let kept = hard_threshold(*e, lambda);
        if kept == 0.0 && *e != 0.0 {
            zeroed += 1;
        }
        *e = kept;
    }
    ThresholdedLevel {
        coefficients: out,
        zeroed,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateReport {
    /// True when `sigma^2 >= m M^2` and the output is the zero function.
    pub step0: bool,
    pub regime: Regime,
    pub sigma: f64,
    pub schedule: Option<ThresholdSchedule>,
    /// Fraction of nonzero coefficients removed, per level.
    pub zeroed_fraction: Vec<f64>,
    pub output: PiecewisePoly,
}

/// The estimator `A(y)`.
pub fn estimate(obs: &ObservationSet, config: &EstimatorConfig) -> Result<PiecewisePoly> {
    Ok(estimate_with_report(obs, config)?.output)
}

pub fn estimate_with_report(obs: &ObservationSet, config: &EstimatorConfig) -> Result<EstimateReport> {
    let regime = config.validate()?;
    if config.d != obs.grid.d() {
        return Err(Error::InvalidArgument(format!(
            "config dimension {} does not match observation dimension {}",
            config.d,
            obs.grid.d()
        )));
    }
    if regime == Regime::NonPrimary {
        warn!(
            "q = {} is outside the primary regime q < p + 2sp/d = {}; rate guarantees do not apply",
            config.q,
            config.p + 2.0 * config.s * config.p / config.d as f64
        );
    }
    let n = obs.grid.n();
    let r = config.order();
    let spec = PolySpaceSpec::new(r, config.d)?;
    if (n as i64) < r as i64 + 1 {
        return Err(Error::Precondition(format!("need n >= r + 1, got n = {n}, r = {r}")));
    }
    let k_max = n - r as u32;
    let sigma = noise_level(config, obs.sigma);
    let ratio = sigma / config.norm_scale;
    if ratio * ratio >= obs.m() as f64 {
        return Ok(EstimateReport {
            step0: true,
            regime,
            sigma,
            schedule: None,
            zeroed_fraction: vec![0.0; k_max as usize + 1],
            output: PiecewisePoly::zero(k_max, spec, 1 << r)?,
        });
    }
    let sched = schedule_with_sigma(config, n, sigma)?;
    let decomposition = decompose(obs, r)?;
    let mut zeroed_fraction = Vec::with_capacity(sched.lambdas.len());
    let levels: Vec<CoefficientVector> = decomposition
        .into_levels()
        .into_iter()
        .zip(&sched.lambdas)
        .map(|(nu, &lambda)| {
            let t = threshold_level(&nu, lambda);
            zeroed_fraction.push(t.zeroed_fraction());
            t.coefficients
        })
        .collect();
    let thresholded = MultiscaleDecomposition::from_levels(n, spec, levels)?;
    Ok(EstimateReport {
        step0: false,
        regime,
        sigma,
        schedule: Some(sched),
        zeroed_fraction,
        output: reconstruct(&thresholded, k_max)?,
    })
}

/// Deterministic term `sum_{k > k*} 2^(-k s p/q) lambda_k^(1 - p/q)` with
/// `p` replaced by `min(p, q)` and unit-ball thresholds.
pub fn deterministic_sum(config: &EstimatorConfig, schedule: &ThresholdSchedule) -> f64 {
    let KStar::Finite(ks) = schedule.k_star else {
        return 0.0;
    };
    let pe = config.p_eff();
    let ratio = pe / config.q;
    schedule
        .unit_lambdas()
        .iter()
        .enumerate()
        .filter(|(k, _)| *k as u32 > ks)
        .map(|(k, l)| (-(k as f64) * config.s * ratio).exp2() * l.powf(1.0 - ratio))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_obs::{build_grid, observe, FunctionOracle, NoiseKind, RealFunction};
    use crate::multiscale::weighted_norm;
    use proptest::prelude::*;

    fn smooth() -> FunctionOracle {
        FunctionOracle::new("smooth", 1, |x| (3.0 * x[0]).sin() * 0.3)
    }

    #[test]
    fn epsilon_values() {
        assert_eq!(epsilon(0.0, 1024, 1.0, 1), 0.0);
        assert!((epsilon(32.0, 1024, 1.0, 1) - 1.0).abs() < 1e-15);
        assert!((epsilon(1.0, 1024, 1.0, 1) - (-10.0f64 / 3.0).exp2()).abs() < 1e-15);
        assert!((epsilon(1.0, 1024, 1.0, 1) - 0.09921).abs() < 1e-5);
    }

    #[test]
    fn k_star_sandwich() {
        assert_eq!(k_star(0.25, 1.0).unwrap(), KStar::Finite(3));
        assert_eq!(k_star(0.5, 1.0).unwrap(), KStar::Finite(2));
        assert_eq!(k_star(0.0, 2.0).unwrap(), KStar::Infinite);
        assert!(k_star(1.0, 1.0).is_err());
        assert!(k_star(-0.1, 1.0).is_err());
        for &(eps, s) in &[(0.3, 1.0), (0.01, 2.0), (0.77, 0.5), (1e-9, 3.0)] {
            let KStar::Finite(k) = k_star(eps, s).unwrap() else { panic!() };
            let x: f64 = eps.powf(-1.0 / s);
            assert!((k as f64 - 1.0).exp2() <= x && x < (k as f64).exp2());
        }
    }

    #[test]
    fn threshold_formula() {
        let ks = KStar::Finite(3);
        assert_eq!(level_threshold(2, ks, 1.0, 1.0, 1.0), 0.0);
        assert_eq!(level_threshold(3, ks, 1.0, 1.0, 1.0), 0.0);
        assert_eq!(level_threshold(5, ks, 1.0, 1.0, 1.0), 0.5);
        assert_eq!(level_threshold(50, KStar::Infinite, 1.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn beta_defaults() {
        let c = EstimatorConfig::new(2.0, 2.0, 2.0, 1);
        assert_eq!(c.beta_interval(), (0.5, f64::INFINITY));
        assert_eq!(c.resolved_beta().unwrap(), 2.5);
        // (1/2, 2 * 1 / (2 - 1)) = (1/2, 2): midpoint 1.25 < d/2 + s.
        let c = EstimatorConfig::new(2.0, 1.0, 2.0, 1);
        assert_eq!(c.resolved_beta().unwrap(), 1.25);
        let bad = EstimatorConfig {
            beta: Some(2.0),
            ..c.clone()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidBeta { .. })));
        let fine = EstimatorConfig { beta: Some(1.9), ..c };
        assert_eq!(fine.resolved_beta().unwrap(), 1.9);
        // p > q uses p_eff = q.
        let c = EstimatorConfig::new(1.0, 4.0, 2.0, 2);
        assert_eq!(c.beta_interval().1, f64::INFINITY);
    }

    #[test]
    fn validation_errors_and_regime() {
        assert!(matches!(
            EstimatorConfig::new(0.5, 1.0, 2.0, 1).validate(),
            Err(Error::CompactEmbedding { .. })
        ));
        assert!(EstimatorConfig::new(1.0, 2.0, 0.5, 1).validate().is_err());
        assert!(EstimatorConfig::new(1.0, 2.0, f64::INFINITY, 1).validate().is_err());
        assert_eq!(EstimatorConfig::new(2.0, 2.0, 2.0, 1).validate().unwrap(), Regime::Primary);
        // q = 10 >= p + 2sp/d = 1 + 2 * 1.5 = 4.
        let c = EstimatorConfig::new(1.5, 1.0, 10.0, 1);
        assert_eq!(c.validate().unwrap(), Regime::NonPrimary);
        assert_eq!(c.resolved_beta().unwrap(), 2.0);
        assert_eq!(EstimatorConfig::new(2.0, 2.0, 2.0, 1).order(), 3);
        assert_eq!(EstimatorConfig::new(1.5, 2.0, 2.0, 1).order(), 2);
    }

    #[test]
    fn noiseless_schedule_is_zero() {
        let c = EstimatorConfig {
            sigma: Some(0.0),
            beta: Some(7.0),
            ..EstimatorConfig::new(2.0, 2.0, 2.0, 1)
        };
        let s = schedule(&c, 8).unwrap();
        assert_eq!(s.k_star, KStar::Infinite);
        assert!(s.lambdas.iter().all(|&l| l == 0.0));
        assert_eq!(s.lambdas.len(), 6);
    }

    #[test]
    fn hard_threshold_values() {
        assert_eq!(hard_threshold(0.5, 1.0), 0.0);
        assert_eq!(hard_threshold(1.5, 1.0), 1.5);
        assert_eq!(hard_threshold(-1.0, 1.0), 0.0);
        for x in [-3.0, -1e-300, 0.0, 2.5] {
            assert_eq!(hard_threshold(x, 0.0), x);
        }
    }

    #[test]
    fn threshold_level_extremes() {
        let spec = PolySpaceSpec::new(2, 1).unwrap();
        let mut nu = CoefficientVector::zeros(2, spec).unwrap();
        nu.entries = vec![0.1, -0.2, 0.0, 3.0, -0.5, 0.7, 1.2, -4.0];
        let id = threshold_level(&nu, 0.0);
        assert_eq!(id.coefficients, nu);
        assert_eq!(id.zeroed, 0);
        let gone = threshold_level(&nu, 4.0);
        assert!(gone.coefficients.entries.iter().all(|&e| e == 0.0));
        assert_eq!(gone.zeroed, 7);
        assert!((gone.zeroed_fraction() - 7.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn step0_returns_zero() {
        let grid = build_grid(6, 1).unwrap();
        let obs = observe(&smooth(), &grid, 8.0, NoiseKind::Gaussian, 3).unwrap();
        let c = EstimatorConfig::new(2.0, 2.0, 2.0, 1);
        let rep = estimate_with_report(&obs, &c).unwrap();
        assert!(rep.step0);
        assert!(rep.output.coeffs().iter().all(|&c| c == 0.0));
        // Just below the guard the estimator runs.
        let obs = observe(&smooth(), &grid, 7.99, NoiseKind::Gaussian, 3).unwrap();
        assert!(!estimate_with_report(&obs, &c).unwrap().step0);
        // The guard scales with the ball radius.
        let big = EstimatorConfig {
            norm_scale: 2.0,
            ..c
        };
        let obs = observe(&smooth(), &grid, 8.0, NoiseKind::Gaussian, 3).unwrap();
        assert!(!estimate_with_report(&obs, &big).unwrap().step0);
    }

    #[test]
    fn noiseless_piecewise_targets_are_reproduced() {
        let spec = PolySpaceSpec::new(3, 1).unwrap();
        let coeffs: Vec<f64> = (0..(spec.rho << 5)).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let target = PiecewisePoly::from_coeffs(5, spec, 8, coeffs).unwrap();
        let obs = observe(&target, &build_grid(8, 1).unwrap(), 0.0, NoiseKind::Gaussian, 0).unwrap();
        let f_hat = estimate(&obs, &EstimatorConfig::new(2.0, 2.0, 2.0, 1)).unwrap();
        for i in 0..=1000 {
            let x = [i as f64 / 1000.0];
            assert!((f_hat.eval_pwp(&x).unwrap() - target.eval(&x)).abs() < 1e-10);
        }
    }

    #[test]
    fn sigma_continuity_at_zero() {
        let grid = build_grid(8, 1).unwrap();
        let f = smooth();
        let c = EstimatorConfig::new(2.0, 2.0, 2.0, 1);
        let clean = estimate(&observe(&f, &grid, 0.0, NoiseKind::Gaussian, 9).unwrap(), &c).unwrap();
        let tiny = estimate(&observe(&f, &grid, 1e-6, NoiseKind::Gaussian, 9).unwrap(), &c).unwrap();
        let gap: Vec<f64> = (0..=2000)
            .map(|i| {
                let x = [i as f64 / 2000.0];
                clean.eval(&x) - tiny.eval(&x)
            })
            .collect();
        assert!(weighted_norm(&gap, 2.0) < 1e-3);
    }

    #[test]
    fn equivariance_under_scaling() {
        let grid = build_grid(9, 1).unwrap();
        let obs = observe(&smooth(), &grid, 0.4, NoiseKind::Gaussian, 17).unwrap();
        let c = EstimatorConfig::new(2.0, 2.0, 2.0, 1);
        let base = estimate(&obs, &c).unwrap();
        for a in [0.5, 3.0] {
            let scaled_cfg = EstimatorConfig {
                norm_scale: a,
                ..c.clone()
            };
            let scaled = estimate(&obs.scaled(a), &scaled_cfg).unwrap();
            for (u, v) in base.coeffs().iter().zip(scaled.coeffs()) {
                assert!((a * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn deterministic_sum_is_bounded_by_epsilon() {
        let mut ratios = Vec::new();
        for &(s, p, q) in &[(2.0, 2.0, 2.0), (2.0, 1.0, 2.0), (1.5, 1.5, 3.0)] {
            let base = EstimatorConfig::new(s, p, q, 1);
            for n in [8u32, 10, 12] {
                for sigma in [0.25, 0.5, 1.0, 4.0, 8.0] {
                    let c = EstimatorConfig {
                        sigma: Some(sigma),
                        ..base.clone()
                    };
                    let sched = schedule(&c, n).unwrap();
                    let sum = deterministic_sum(&c, &sched);
                    ratios.push(sum / sched.epsilon);
                }
            }
        }
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(max.is_finite() && max < 50.0, "{ratios:?}");
    }

    proptest! {
        #[test]
        fn schedule_monotone_in_sigma(s1 in 0.01f64..1.0, factor in 1.0f64..4.0, n in 6u32..12) {
            let c = EstimatorConfig::new(2.0, 2.0, 2.0, 1);
            let lo = schedule(&EstimatorConfig { sigma: Some(s1), ..c.clone() }, n).unwrap();
            let hi = schedule(&EstimatorConfig { sigma: Some(s1 * factor), ..c }, n).unwrap();
            for (a, b) in lo.lambdas.iter().zip(&hi.lambdas) {
                prop_assert!(b >= a);
            }
            for w in hi.lambdas.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
        }

        #[test]
        fn hard_threshold_keeps_or_kills(x in -10.0f64..10.0, l in 0.0f64..10.0) {
            let t = hard_threshold(x, l);
            prop_assert!(t == x || t == 0.0);
            prop_assert!((x - t).abs() <= l);
        }
    }
}
