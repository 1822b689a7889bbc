//! Bump profiles and bundled targets with known smoothness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_obs::{FunctionOracle, RealFunction};
use crate::quadrature::UnitRule;

/// One-dimensional profile `exp(1 - 1/(1 - (2t-1)^2))` on `(0, 1)`, zero elsewhere.
pub fn mollifier_1d(t: f64) -> f64 {
    if !(t > 0.0 && t < 1.0) {
        return 0.0;
    }
    let u = 2.0 * t - 1.0;
    (1.0 - 1.0 / (1.0 - u * u)).exp()
}

/// Product of [`mollifier_1d`] over the coordinates; equals 1 at the center of the unit cube.
pub fn mollifier(x: &[f64]) -> f64 {
    x.iter().map(|&t| mollifier_1d(t)).product()
}

/// `||mollifier||_{L_q([0,1]^d)}`.
pub fn mollifier_lq_norm(q: f64, d: usize) -> f64 {
    if q.is_infinite() {
        return 1.0;
    }
    let rule = UnitRule::composite(8, 64);
    let one_dim: f64 = rule.pairs.iter().map(|&(t, w)| w * mollifier_1d(t).powf(q)).sum();
    one_dim.powf(d as f64 / q)
}

/// `amplitude * mollifier(scale * (x - lower))`, supported on the cube
/// `lower + [0, 1/scale]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpFunction {
    pub lower: Vec<f64>,
    pub scale: f64,
    pub amplitude: f64,
}

impl BumpFunction {
    pub fn new(lower: Vec<f64>, scale: f64, amplitude: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("bump scale must be positive, got {scale}")));
        }
        Ok(Self { lower, scale, amplitude })
    }

    /// Bump on cell `cell` (multi-index) of the uniform partition with `n` cells per axis,
    /// amplitude `gamma * n^-s`.
    pub fn on_cell(cell: &[usize], n: usize, s: f64, gamma: f64) -> Result<Self> {
        let h = 1.0 / n as f64;
        Self::new(
            cell.iter().map(|&c| c as f64 * h).collect(),
            n as f64,
            gamma * (n as f64).powf(-s),
        )
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().map(|&l| l + 0.5 / self.scale).collect()
    }
}

impl RealFunction for BumpFunction {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut value = self.amplitude;
        for (xi, li) in x.iter().zip(&self.lower) {
            value *= mollifier_1d(self.scale * (xi - li));
            if value == 0.0 {
                return 0.0;
            }
        }
        value
    }
}

/// Membership `f in B^s_inf(L_p)` claimed for a bundled target. `sharp` means
/// no larger `s` works for this `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeclaredSmoothness {
    pub s: f64,
    pub p: f64,
    pub sharp: bool,
}

#[derive(Clone, Debug)]
pub struct BundledTarget {
    pub name: &'static str,
    pub oracle: FunctionOracle,
    pub smoothness: DeclaredSmoothness,
}

pub const TARGET_NAMES: [&str; 6] = ["smooth-bump", "bump-s2", "cusp", "kink", "quadratic", "zero"];

/// `(1 - (2u-1)^2)_+^(3/2)` for `u = (t - 1/5) / (3/5)`: a bump whose two edges
/// behave like `|t - t0|^(3/2)`, i.e. smoothness exactly 2 in `L_2`.
fn bump_s2_1d(t: f64) -> f64 {
    let u = (t - 0.2) / 0.6;
    if !(u > 0.0 && u < 1.0) {
        return 0.0;
    }
    let v = 2.0 * u - 1.0;
    (1.0 - v * v).powf(1.5)
}

/// Looks up a bundled target by name for dimension `d`.
pub fn bundled_target(name: &str, d: usize) -> Result<BundledTarget> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    let target = match name {
        "smooth-bump" => BundledTarget {
            name: "smooth-bump",
            oracle: FunctionOracle::new("mollifier on the unit cube", d, mollifier),
            smoothness: DeclaredSmoothness { s: 2.0, p: 2.0, sharp: false },
        },
        "bump-s2" => BundledTarget {
            name: "bump-s2",
            oracle: FunctionOracle::new("(1 - (2u-1)^2)_+^(3/2) on [1/5, 4/5]^d", d, |x: &[f64]| {
                x.iter().map(|&t| bump_s2_1d(t)).product()
            }),
            smoothness: DeclaredSmoothness { s: 2.0, p: 2.0, sharp: true },
        },
        "cusp" => BundledTarget {
            name: "cusp",
            oracle: FunctionOracle::new("|x_1 - 1/3|^(3/2)", d, |x: &[f64]| (x[0] - 1.0 / 3.0).abs().powf(1.5)),
            smoothness: DeclaredSmoothness { s: 2.0, p: 2.0, sharp: true },
        },
        "kink" => BundledTarget {
            name: "kink",
            oracle: FunctionOracle::new("|x_1 - 1/3|", d, |x: &[f64]| (x[0] - 1.0 / 3.0).abs()),
            smoothness: DeclaredSmoothness { s: 1.5, p: 2.0, sharp: true },
        },
        "quadratic" => BundledTarget {
            name: "quadratic",
            oracle: FunctionOracle::new("0.3 + x_1 - 0.5 x_1^2 + x_1 x_d", d, |x: &[f64]| {
                0.3 + x[0] - 0.5 * x[0] * x[0] + x[0] * x[x.len() - 1]
            }),
            smoothness: DeclaredSmoothness { s: 2.5, p: 2.0, sharp: false },
        },
        "zero" => BundledTarget {
            name: "zero",
            oracle: FunctionOracle::new("0", d, |_: &[f64]| 0.0),
            smoothness: DeclaredSmoothness { s: 2.5, p: 2.0, sharp: false },
        },
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown target '{other}', expected one of {}",
                TARGET_NAMES.join(", ")
            )))
        }
    };
    Ok(target)
}

pub fn bundled_targets(d: usize) -> Result<Vec<BundledTarget>> {
    TARGET_NAMES.iter().map(|name| bundled_target(name, d)).collect()
}
