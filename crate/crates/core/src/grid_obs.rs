//! Sample grids and the noisy observation model `y_i = f(x_i) + eta_i`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of grid points.
pub const DEFAULT_MAX_POINTS: usize = 1 << 26;

/// Anything that can be evaluated on the closed unit cube.
pub trait RealFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
}

/// Tensor-product grid `{0, 2^-n, ..., 1 - 2^-n}^d` in lexicographic order
/// (first coordinate most significant).
///
/// Points are generated on demand from their index, they are not stored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleGrid {
    n: u32,
    d: usize,
    m: usize,
}

impl SampleGrid {
    pub fn new(n: u32, d: usize) -> Result<Self> {
        Self::with_limit(n, d, DEFAULT_MAX_POINTS)
    }

    pub fn with_limit(n: u32, d: usize, limit: usize) -> Result<Self> {
        if n < 1 || d < 1 {
            return Err(Error::Precondition(format!(
                "grid needs n >= 1 and d >= 1, got n = {n}, d = {d}"
            )));
        }
        let m = (n as u64)
            .checked_mul(d as u64)
            .filter(|&bits| bits < usize::BITS as u64)
            .map(|bits| 1usize << bits)
            .filter(|&m| m <= limit)
            .ok_or(Error::Capacity { n, d, limit })?;
        Ok(Self { n, d, m })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of points, `2^(n d)`.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Points per axis, `2^n`.
    pub fn per_axis(&self) -> usize {
        1 << self.n
    }

    pub fn spacing(&self) -> f64 {
        (-(self.n as f64)).exp2()
    }

    /// Integer coordinates of point `i`, written into `out`.
    pub fn multi_index(&self, mut i: usize, out: &mut [usize]) {
        let mask = self.per_axis() - 1;
        for slot in out.iter_mut().rev() {
            *slot = i & mask;
            i >>= self.n;
        }
    }

    /// Linear index of the point with integer coordinates `multi`.
    pub fn linear_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &g| (acc << self.n) | g)
    }

    pub fn point_into(&self, i: usize, out: &mut [f64]) {
        let h = self.spacing();
        let mask = self.per_axis() - 1;
        let mut rest = i;
        for slot in out.iter_mut().rev() {
            *slot = (rest & mask) as f64 * h;
            rest >>= self.n;
        }
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        self.point_into(i, &mut x);
        x
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.m).map(|i| self.point(i))
    }
}

/// `build_grid(n, d)` with the default capacity limit.
pub fn build_grid(n: u32, d: usize) -> Result<SampleGrid> {
    SampleGrid::new(n, d)
}

/// A deterministic target function together with a readable description.
#[derive(Clone)]
pub struct FunctionOracle {
    descriptor: String,
    dim: usize,
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl FunctionOracle {
    pub fn new<F>(descriptor: impl Into<String>, dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            descriptor: descriptor.into(),
            dim,
            eval: Arc::new(f),
        }
    }

    /// Wraps any shared [`RealFunction`].
    pub fn from_function(descriptor: impl Into<String>, f: Arc<dyn RealFunction>) -> Self {
        let dim = f.dim();
        Self::new(descriptor, dim, move |x| f.eval(x))
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let inner = self.eval.clone();
        Self {
            descriptor: format!("{factor} * {}", self.descriptor),
            dim: self.dim,
            eval: Arc::new(move |x| factor * inner(x)),
        }
    }
}

impl RealFunction for FunctionOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
}

impl fmt::Debug for FunctionOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionOracle")
            .field("descriptor", &self.descriptor)
            .field("dim", &self.dim)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// Uniform on `[-sigma sqrt(3), sigma sqrt(3)]`.
    UniformBounded,
    /// `+-sigma` with equal probability.
    RademacherScaled,
}

impl NoiseKind {
    /// Unit-variance draw for point `index` of the stream `seed`.
    ///
    /// Each point owns the ChaCha stream `index` under key `seed`, so the
    /// value does not depend on how indices are scheduled across threads.
    pub fn unit_draw(self, seed: u64, index: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        match self {
            NoiseKind::Gaussian => rng.sample(StandardNormal),
            NoiseKind::UniformBounded => {
                let u: f64 = rng.random();
                (2.0 * u - 1.0) * 3f64.sqrt()
            }
            NoiseKind::RademacherScaled => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservationSet {
    pub grid: SampleGrid,
    pub values: Vec<f64>,
    pub sigma: f64,
    pub noise_kind: NoiseKind,
    pub seed: u64,
}

impl ObservationSet {
    /// Wraps externally supplied values (e.g. read from a file).
    pub fn from_values(grid: SampleGrid, values: Vec<f64>, sigma: f64) -> Result<Self> {
        if values.len() != grid.m() {
            return Err(Error::LengthMismatch {
                expected: grid.m(),
                found: values.len(),
            });
        }
        check_sigma(sigma)?;
        Ok(Self {
            grid,
            values,
            sigma,
            noise_kind: NoiseKind::Gaussian,
            seed: 0,
        })
    }

    pub fn m(&self) -> usize {
        self.grid.m()
    }

    /// Same sites and noise metadata, values multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            sigma: self.sigma * factor.abs(),
            ..self.clone()
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Samples `f` on the grid and adds independent noise of standard deviation `sigma`.
pub fn observe(
    oracle: &dyn RealFunction,
    grid: &SampleGrid,
    sigma: f64,
    noise_kind: NoiseKind,
    seed: u64,
) -> Result<ObservationSet> {
    check_sigma(sigma)?;
    if oracle.dim() != grid.d() {
        return Err(Error::InvalidArgument(format!(
            "oracle dimension {} does not match grid dimension {}",
            oracle.dim(),
            grid.d()
        )));
    }
    let values = (0..grid.m())
        .into_par_iter()
        .map_init(
            || vec![0.0; grid.d()],
            |x, i| {
                grid.point_into(i, x);
                let clean = oracle.eval(x);
                if sigma == 0.0 {
                    clean
                } else {
                    clean + sigma * noise_kind.unit_draw(seed, i as u64)
                }
            },
        )
        .collect();
    Ok(ObservationSet {
        grid: grid.clone(),
        values,
        sigma,
        noise_kind,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn zero(d: usize) -> FunctionOracle {
        FunctionOracle::new("zero", d, |_| 0.0)
    }

    #[test]
    fn one_level_unit_interval() {
        let g = build_grid(1, 1).unwrap();
        assert_eq!(g.m(), 2);
        assert_eq!(g.points().collect::<Vec<_>>(), vec![vec![0.0], vec![0.5]]);
    }

    #[test]
    fn one_level_square_is_lexicographic() {
        let g = build_grid(1, 2).unwrap();
        let pts: Vec<_> = g.points().collect();
        assert_eq!(
            pts,
            vec![vec![0.0, 0.0], vec![0.0, 0.5], vec![0.5, 0.0], vec![0.5, 0.5]]
        );
    }

    #[test]
    fn three_levels_unit_interval() {
        let g = build_grid(3, 1).unwrap();
        assert_eq!(g.m(), 8);
        let max = g.points().map(|p| p[0]).fold(f64::MIN, f64::max);
        assert_eq!(max, 0.875);
    }

    #[test]
    fn capacity_and_precondition_errors() {
        assert!(matches!(build_grid(14, 2), Err(Error::Capacity { .. })));
        assert!(matches!(build_grid(27, 1), Err(Error::Capacity { .. })));
        assert!(matches!(build_grid(0, 1), Err(Error::Precondition(_))));
        assert!(matches!(build_grid(3, 0), Err(Error::Precondition(_))));
        assert!(SampleGrid::with_limit(5, 1, 16).is_err());
    }

    #[test]
    fn index_round_trip() {
        let g = build_grid(3, 3).unwrap();
        let mut multi = vec![0; 3];
        for i in [0, 1, 77, 511] {
            g.multi_index(i, &mut multi);
            assert_eq!(g.linear_index(&multi), i);
        }
    }

    #[test]
    fn grid_nesting() {
        for d in 1..=2 {
            let coarse = build_grid(3, d).unwrap();
            let fine = build_grid(4, d).unwrap();
            let fine_pts: std::collections::HashSet<Vec<u64>> = fine
                .points()
                .map(|p| p.iter().map(|c| c.to_bits()).collect())
                .collect();
            for p in coarse.points() {
                assert!(fine_pts.contains(&p.iter().map(|c| c.to_bits()).collect::<Vec<_>>()));
            }
        }
    }

    #[test]
    fn noiseless_observation_is_exact() {
        let f = FunctionOracle::new("x0 * x1", 2, |x| x[0] * x[1] + 0.25);
        let g = build_grid(3, 2).unwrap();
        let obs = observe(&f, &g, 0.0, NoiseKind::Gaussian, 3).unwrap();
        for (i, v) in obs.values.iter().enumerate() {
            let x = g.point(i);
            assert_eq!(*v, x[0] * x[1] + 0.25);
        }
    }

    #[test]
    fn same_seed_same_values() {
        let g = build_grid(8, 1).unwrap();
        for kind in [
            NoiseKind::Gaussian,
            NoiseKind::UniformBounded,
            NoiseKind::RademacherScaled,
        ] {
            let a = observe(&zero(1), &g, 0.7, kind, 11).unwrap();
            let b = observe(&zero(1), &g, 0.7, kind, 11).unwrap();
            let c = observe(&zero(1), &g, 0.7, kind, 12).unwrap();
            assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert_ne!(a.values, c.values);
        }
    }

    #[test]
    fn serial_and_parallel_generation_agree() {
        let g = build_grid(10, 1).unwrap();
        let obs = observe(&zero(1), &g, 1.0, NoiseKind::Gaussian, 5).unwrap();
        for i in (0..g.m()).step_by(37) {
            assert_eq!(obs.values[i], NoiseKind::Gaussian.unit_draw(5, i as u64));
        }
    }

    #[test]
    fn gaussian_moments_over_a_million_draws() {
        let g = build_grid(20, 1).unwrap();
        let obs = observe(&zero(1), &g, 1.0, NoiseKind::Gaussian, 2024).unwrap();
        let n = obs.values.len() as f64;
        let mean = obs.values.iter().sum::<f64>() / n;
        let var = obs.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn other_kinds_have_unit_variance_and_bounded_support() {
        let g = build_grid(17, 1).unwrap();
        for (kind, bound) in [
            (NoiseKind::UniformBounded, 3f64.sqrt()),
            (NoiseKind::RademacherScaled, 1.0),
        ] {
            let obs = observe(&zero(1), &g, 2.0, kind, 9).unwrap();
            let n = obs.values.len() as f64;
            let var = obs.values.iter().map(|v| v * v).sum::<f64>() / n;
            assert!((var - 4.0).abs() < 0.05, "{kind:?} variance {var}");
            assert!(obs.values.iter().all(|v| v.abs() <= 2.0 * bound + 1e-12));
        }
    }

    #[test]
    fn gaussian_noise_passes_kolmogorov_smirnov() {
        let g = build_grid(17, 1).unwrap();
        let sigma = 0.3;
        let obs = observe(&zero(1), &g, sigma, NoiseKind::Gaussian, 77).unwrap();
        let mut v = obs.values.clone();
        v.sort_by(f64::total_cmp);
        let normal = Normal::new(0.0, sigma).unwrap();
        let n = v.len() as f64;
        let stat = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = normal.cdf(x);
                (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic critical value at level 1e-3.
        let critical = (-(0.5e-3f64).ln() / 2.0).sqrt() / n.sqrt();
        assert!(stat < critical, "KS statistic {stat} >= {critical}");
    }

    #[test]
    fn negative_sigma_rejected() {
        let g = build_grid(2, 1).unwrap();
        assert!(observe(&zero(1), &g, -1.0, NoiseKind::Gaussian, 0).is_err());
        assert!(observe(&zero(2), &g, 1.0, NoiseKind::Gaussian, 0).is_err());
    }
}
