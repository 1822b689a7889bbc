//! Two functions that agree on every grid point but are far apart in `L_q`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::packing::calibrate_amplitude;
use super::targets::mollifier_1d;
use crate::analysis::{besov_seminorm_pwp, lq_distance, QuadratureSpec};
use crate::error::{Error, Result};
use crate::grid_obs::{FunctionOracle, RealFunction, SampleGrid};

/// Bumps living strictly inside grid cells, so they vanish at every grid point.
/// Either every cell carries a bump or only the cell at the middle multi-index
/// `(2^(n-1), ..., 2^(n-1))` does.
#[derive(Clone, Debug)]
pub struct CellBumps {
    n: u32,
    d: usize,
    amplitude: f64,
    single_cell: bool,
}

impl CellBumps {
    pub fn new(n: u32, d: usize, amplitude: f64, single_cell: bool) -> Self {
        Self { n, d, amplitude, single_cell }
    }
}

impl RealFunction for CellBumps {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let per_axis = (1u64 << self.n) as f64;
        let middle = (1u64 << self.n.saturating_sub(1)) as f64;
        let mut value = self.amplitude;
        for &xi in x {
            let scaled = xi * per_axis;
            let cell = scaled.floor();
            if self.single_cell && cell != middle {
                return 0.0;
            }
            value *= mollifier_1d(scaled - cell);
            if value == 0.0 {
                return 0.0;
            }
        }
        value
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoolingReport {
    pub n: u32,
    pub d: usize,
    pub s: f64,
    pub p: f64,
    pub q: f64,
    pub m: usize,
    pub single_cell: bool,
    pub gamma: f64,
    pub amplitude: f64,
    /// Seminorm estimate of `f` (and of `g = -f`).
    pub seminorm: f64,
    /// `-s/d + (1/p - 1/q)_+`.
    pub exponent: f64,
    /// Measured `||f - g||_{L_q}`.
    pub separation: f64,
    /// `separation / m^exponent`.
    pub constant: f64,
}

#[derive(Clone, Debug)]
pub struct FoolingPair {
    pub f: FunctionOracle,
    pub g: FunctionOracle,
    pub grid: SampleGrid,
    pub report: FoolingReport,
}

/// `f = g0`, `g = -g0` for a bump sum `g0` that vanishes on the grid, with the
/// amplitude calibrated so the seminorm estimate of `g0` is at most 1/2.
///
/// For `p >= q` every grid cell carries a bump of height `gamma h^s`; otherwise
/// a single cell carries one of height `gamma h^(s - d/p)`.
pub fn fooling_pair(grid: &SampleGrid, s: f64, p: f64, q: f64) -> Result<FoolingPair> {
    let (n, d) = (grid.n(), grid.d());
    if n == 0 {
        return Err(Error::InvalidArgument("the grid needs at least two points per axis".into()));
    }
    if !(s > 0.0 && p >= 1.0 && q >= 1.0) {
        return Err(Error::InvalidArgument(format!("need s > 0, p >= 1, q >= 1, got ({s}, {p}, {q})")));
    }
    let single_cell = p < q;
    let h = grid.spacing();
    let shape = if single_cell { h.powf(s - d as f64 / p) } else { h.powf(s) };
    let r = s.floor() as usize + 1;
    let k_max = n + 3;
    let seminorm_spec = QuadratureSpec::new(k_max + 2, 4);
    let seminorm_at = |gamma: f64| besov_seminorm_pwp(&CellBumps::new(n, d, gamma * shape, single_cell), s, p, r, k_max, &seminorm_spec);

    let gamma = calibrate_amplitude(seminorm_at)?;
    let amplitude = gamma * shape;
    let seminorm = seminorm_at(gamma)?;
    let g0 = Arc::new(CellBumps::new(n, d, amplitude, single_cell));
    let f = FunctionOracle::from_function("fooling bump sum", g0.clone());
    let g = FunctionOracle::from_function("negated fooling bump sum", g0).scaled(-1.0);

    let separation = lq_distance(&f, &g, q, &QuadratureSpec::new(n + 3, 6))?;
    let exponent = -s / d as f64 + (1.0 / p - 1.0 / q).max(0.0);
    let m = grid.m();
    Ok(FoolingPair {
        f,
        g,
        grid: grid.clone(),
        report: FoolingReport {
            n,
            d,
            s,
            p,
            q,
            m,
            single_cell,
            gamma,
            amplitude,
            seminorm,
            exponent,
            separation,
            constant: separation / (m as f64).powf(exponent),
        },
    })
}

/// Largest `|f(x)| + |g(x)|` over the grid points; zero for a valid pair.
pub fn grid_disagreement(pair: &FoolingPair) -> f64 {
    let mut x = vec![0.0; pair.grid.d()];
    (0..pair.grid.m())
        .map(|i| {
            pair.grid.point_into(i, &mut x);
            pair.f.eval(&x).abs() + pair.g.eval(&x).abs()
        })
        .fold(0.0, f64::max)
}
