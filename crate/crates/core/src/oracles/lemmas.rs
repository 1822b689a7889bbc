//! Numeric checks of the Gaussian shift lemma and the two auxiliary
//! integral/series estimates used by the tail bounds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Where the halfspace `B` with `mu_{0,sigma}(B) = alpha_bar` sits relative to the shift `y`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HalfspaceOrientation {
    /// `B = {<z, y/|y|> >= t}`: the largest shifted mass among sets of standard mass `alpha_bar`.
    #[default]
    TowardShift,
    /// `B = {<z, y/|y|> <= -t}`: the smallest shifted mass.
    AwayFromShift,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftMass {
    pub y_norm: f64,
    pub sigma: f64,
    pub alpha_bar: f64,
    pub orientation: HalfspaceOrientation,
    /// `mu_{y,sigma}(B)`.
    pub mass: f64,
    /// `mass < 1/2`.
    pub bound_ok: bool,
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// [`gaussian_shift_mass_oriented`] for the extremal halfspace.
pub fn gaussian_shift_mass(y_norm: f64, sigma: f64, alpha_bar: f64, m_dim: usize) -> Result<ShiftMass> {
    gaussian_shift_mass_oriented(y_norm, sigma, alpha_bar, m_dim, HalfspaceOrientation::TowardShift)
}

/// Mass of the halfspace `B` (with `N(0, sigma^2 I_m)`-mass `alpha_bar`) under
/// `N(y, sigma^2 I_m)`. Only the component of the Gaussian along `y` matters,
/// so the result does not depend on `m_dim`.
pub fn gaussian_shift_mass_oriented(
    y_norm: f64,
    sigma: f64,
    alpha_bar: f64,
    m_dim: usize,
    orientation: HalfspaceOrientation,
) -> Result<ShiftMass> {
    if m_dim == 0 || !(sigma > 0.0) || !(y_norm >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need m >= 1, sigma > 0, |y| >= 0; got ({m_dim}, {sigma}, {y_norm})"
        )));
    }
    if !(alpha_bar > 0.0 && alpha_bar < 0.2) {
        return Err(Error::Precondition(format!("alpha_bar must lie in (0, 1/5), got {alpha_bar}")));
    }
    let radius_sq = -sigma * sigma * (5.0 * alpha_bar).ln();
    if !(y_norm * y_norm < radius_sq) {
        return Err(Error::Precondition(format!(
            "|y|^2 = {} must be below -sigma^2 ln(5 alpha_bar) = {radius_sq}",
            y_norm * y_norm
        )));
    }
    let phi = standard_normal();
    let z = phi.inverse_cdf(alpha_bar);
    let shift = y_norm / sigma;
    let mass = match orientation {
        HalfspaceOrientation::TowardShift => phi.cdf(z + shift),
        HalfspaceOrientation::AwayFromShift => phi.cdf(z - shift),
    };
    Ok(ShiftMass {
        y_norm,
        sigma,
        alpha_bar,
        orientation,
        mass,
        bound_ok: mass < 0.5,
    })
}

/// Evaluates [`gaussian_shift_mass`] on `alpha_count` values of `alpha_bar`
/// spread over `(0, 1/5)` (log-spaced down to `1e-12`) and, for each,
/// `y_count` norms spread over `[0, radius)`.
pub fn shift_mass_sweep(sigma: f64, m_dim: usize, alpha_count: usize, y_count: usize) -> Result<Vec<ShiftMass>> {
    let mut out = Vec::with_capacity(alpha_count * y_count);
    for i in 0..alpha_count {
        let frac = (i as f64 + 0.5) / alpha_count as f64;
        let alpha = (frac * 0.2f64.ln() + (1.0 - frac) * 1e-12f64.ln()).exp();
        let radius = sigma * (-(5.0 * alpha).ln()).sqrt();
        for j in 0..y_count {
            let y = radius * j as f64 / y_count as f64;
            out.push(gaussian_shift_mass(y, sigma, alpha, m_dim)?);
        }
    }
    Ok(out)
}

/// Upper cut of the shifted integrals below; the integrand is below `e^-800` there.
const TAIL_CUTOFF: f64 = 40.0;

/// `e^(a^2/2) * int_a^inf x^q e^(-x^2/2) dx`, computed as
/// `int_0^inf (a+u)^q e^(-a u - u^2/2) du` so that no underflow occurs for large `a`.
fn scaled_tail_integral(a: f64, q: f64) -> Result<f64> {
    let out = quadrature::integrate(|u| (a + u).powf(q) * (-a * u - 0.5 * u * u).exp(), 0.0, TAIL_CUTOFF, 1e-13);
    let integral = out.integral;
    if !integral.is_finite() || out.error_estimate > 1e-9 * integral.abs().max(1e-300) {
        return Err(Error::Quadrature(format!(
            "tail integral at a = {a}, q = {q}: value {integral}, error estimate {}",
            out.error_estimate
        )));
    }
    Ok(integral)
}

/// `I(a, q) = int_a^inf x^q e^(-x^2/2) dx`.
pub fn tail_integral(a: f64, q: f64) -> Result<f64> {
    if !(a >= 0.0 && q > 0.0) {
        return Err(Error::InvalidArgument(format!("need a >= 0, q > 0; got ({a}, {q})")));
    }
    Ok(scaled_tail_integral(a, q)? * (-0.5 * a * a).exp())
}

/// `I(0, q) = 2^((q-1)/2) Gamma((q+1)/2)`.
pub fn tail_integral_at_zero(q: f64) -> f64 {
    (0.5 * (q - 1.0)).exp2() * gamma(0.5 * (q + 1.0))
}

/// A constant `C(q)` with `I(a, q) <= C(q) e^(-a^2/4)` for every `a >= 0`:
/// for `a >= 1` split `x^q e^(-x^2/2) = x^(q-1) e^(-x^2/4) * x e^(-x^2/4)` and
/// bound the first factor by its maximum over `x >= 1`; for `a < 1` use
/// `I(a, q) <= I(0, q)`.
pub fn tail_integral_constant(q: f64) -> f64 {
    let peak = if q > 1.0 { (2.0 * (q - 1.0)).sqrt().max(1.0) } else { 1.0 };
    let sup = peak.powf(q - 1.0) * (-peak * peak / 4.0).exp();
    (2.0 * sup).max(tail_integral_at_zero(q) * 0.25f64.exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailIntegralCheck {
    pub q: f64,
    /// `(a, I(a, q) e^(a^2/4))`.
    pub scaled: Vec<(f64, f64)>,
    pub constant: f64,
    pub bounded: bool,
    pub nonincreasing_tail: bool,
    pub below_origin: bool,
    pub origin_matches: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesCheck {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// `(tau, e^(c tau) sum_k 2^(ak) e^(-c 2^(bk) tau))`.
    pub ratios: Vec<(f64, f64)>,
    /// Largest ratio over the `tau` grid.
    pub constant: f64,
    pub finite: bool,
    pub nonincreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub integrals: Vec<TailIntegralCheck>,
    pub series: Vec<SeriesCheck>,
    pub passed: bool,
}

/// `e^(c tau) sum_{k>=0} 2^(ak) e^(-c 2^(bk) tau)`, summed until the remaining
/// terms are certified negligible: once consecutive term ratios drop below
/// 1/2 (they decrease in `k`), the tail is at most the last term.
pub fn series_ratio(a: f64, b: f64, c: f64, tau: f64) -> Result<f64> {
    if !(a >= 0.0 && b > 0.0 && c > 0.0 && tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need a >= 0 and b, c, tau > 0; got ({a}, {b}, {c}, {tau})"
        )));
    }
    let ln2 = std::f64::consts::LN_2;
    let log_term = |k: f64| a * k * ln2 - c * ((b * k).exp2() - 1.0) * tau;
    let mut sum = 0.0;
    let mut k = 0.0;
    loop {
        let term = log_term(k).exp();
        sum += term;
        let next_ratio = (log_term(k + 1.0) - log_term(k)).exp();
        if next_ratio < 0.5 && term <= 1e-18 * sum {
            break;
        }
        k += 1.0;
        if k > 10_000.0 {
            return Err(Error::Quadrature(format!("series did not settle for ({a}, {b}, {c}, {tau})")));
        }
    }
    Ok(sum)
}

fn check_integrals(q: f64, a_grid: &[f64]) -> Result<TailIntegralCheck> {
    let constant = tail_integral_constant(q);
    let origin = tail_integral_at_zero(q);
    let scaled: Vec<(f64, f64)> = a_grid
        .iter()
        .map(|&a| Ok((a, scaled_tail_integral(a, q)? * (-0.25 * a * a).exp())))
        .collect::<Result<_>>()?;
    let bounded = scaled.iter().all(|&(_, v)| v.is_finite() && v <= constant);
    let start = 2.0 * q.sqrt();
    let tail: Vec<f64> = scaled.iter().filter(|v| v.0 >= start).map(|v| v.1).collect();
    let nonincreasing_tail = tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10));
    let below_origin = scaled
        .iter()
        .all(|&(a, v)| v * (-0.25 * a * a).exp() <= origin * (1.0 + 1e-10));
    let origin_matches = ((scaled_tail_integral(0.0, q)? - origin) / origin).abs() < 1e-10;
    Ok(TailIntegralCheck {
        q,
        scaled,
        constant,
        bounded,
        nonincreasing_tail,
        below_origin,
        origin_matches,
    })
}

fn check_series(a: f64, b: f64, c: f64, tau_grid: &[f64]) -> Result<SeriesCheck> {
    let ratios: Vec<(f64, f64)> = tau_grid
        .iter()
        .map(|&tau| Ok((tau, series_ratio(a, b, c, tau)?)))
        .collect::<Result<_>>()?;
    let constant = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(SeriesCheck {
        a,
        b,
        c,
        constant,
        finite: constant.is_finite() && ratios.iter().all(|r| r.1 >= 1.0),
        nonincreasing: ratios.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12)),
        ratios,
    })
}

/// Runs the integral check for every `q` and the series check for every
/// `(a, b, c)`; `tau_grid` should be increasing.
pub fn quadrature_lemma_checks(q_list: &[f64], a_grid: &[f64], tau_grid: &[f64], abc_grid: &[(f64, f64, f64)]) -> Result<LemmaReport> {
    let integrals: Vec<TailIntegralCheck> = q_list.iter().map(|&q| check_integrals(q, a_grid)).collect::<Result<_>>()?;
    let series: Vec<SeriesCheck> = abc_grid
        .iter()
        .map(|&(a, b, c)| check_series(a, b, c, tau_grid))
        .collect::<Result<_>>()?;
    let passed = integrals
        .iter()
        .all(|c| c.bounded && c.nonincreasing_tail && c.below_origin && c.origin_matches)
        && series.iter().all(|s| s.finite && s.nonincreasing);
    Ok(LemmaReport { integrals, series, passed })
}

/// Grids used by the bundled validation suite.
pub fn default_lemma_grids() -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<(f64, f64, f64)>) {
    let q_list = vec![1.0, 2.0, 4.0];
    let a_grid: Vec<f64> = (0..=200).map(|i| 0.1 * i as f64).collect();
    let tau_grid: Vec<f64> = (0..=40).map(|i| 100f64.powf(i as f64 / 40.0)).collect();
    let mut abc = Vec::new();
    for a in [0.0, 1.0, 2.0] {
        for b in [0.5, 1.0, 2.0] {
            for c in [0.5, 1.0, 2.0] {
                abc.push((a, b, c));
            }
        }
    }
    (q_list, a_grid, tau_grid, abc)
}
