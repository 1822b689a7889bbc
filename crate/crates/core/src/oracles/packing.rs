//! Sign packings and the signed-bump family built on them.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::targets::{mollifier_1d, mollifier_lq_norm};
use crate::analysis::{besov_seminorm_pwp, lq_distance, QuadratureSpec};
use crate::error::{Error, Result};
use crate::grid_obs::{FunctionOracle, RealFunction};
use crate::rng::stream;

pub const DEFAULT_DRAW_BUDGET: usize = 100_000;
pub const DEFAULT_MAX_SIZE: usize = 1 << 14;

/// Sign vectors in `{-1, +1}^len`, bit `i` set meaning coordinate `i` is `-1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackingSigns {
    pub len: usize,
    pub target_distance: usize,
    /// Minimum pairwise Hamming distance, recomputed by a full scan.
    pub min_distance: usize,
    pub draws: usize,
    pub vectors: Vec<Vec<u64>>,
}

impl PackingSigns {
    pub fn size(&self) -> usize {
        self.vectors.len()
    }

    pub fn sign(&self, v: usize, i: usize) -> f64 {
        if self.vectors[v][i / 64] >> (i % 64) & 1 == 1 {
            -1.0
        } else {
            1.0
        }
    }

    pub fn signs(&self, v: usize) -> Vec<f64> {
        (0..self.len).map(|i| self.sign(v, i)).collect()
    }
}

pub fn hamming(a: &[u64], b: &[u64]) -> usize {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones() as usize).sum()
}

/// Full pairwise scan; `usize::MAX` for fewer than two vectors.
pub fn certify_min_distance(vectors: &[Vec<u64>]) -> usize {
    (0..vectors.len())
        .into_par_iter()
        .map(|i| {
            vectors[i + 1..]
                .iter()
                .map(|w| hamming(&vectors[i], w))
                .min()
                .unwrap_or(usize::MAX)
        })
        .min()
        .unwrap_or(usize::MAX)
}

/// [`packing_signs_with_budget`] with the default draw budget and size cap.
pub fn packing_signs(len: usize, target_distance: usize, seed: u64) -> Result<PackingSigns> {
    packing_signs_with_budget(len, target_distance, DEFAULT_DRAW_BUDGET, DEFAULT_MAX_SIZE, seed)
}

/// Greedy random packing: draw uniform sign vectors and keep each one whose
/// distance to every kept vector is at least `target_distance`. Stops after
/// `budget` draws or once `max_size` vectors are kept.
pub fn packing_signs_with_budget(
    len: usize,
    target_distance: usize,
    budget: usize,
    max_size: usize,
    seed: u64,
) -> Result<PackingSigns> {
    if len < 4 {
        return Err(Error::PackingBudget { kept: 0, target: target_distance });
    }
    if target_distance == 0 || 2 * target_distance > len {
        return Err(Error::Precondition(format!(
            "target distance must lie in [1, len/2], got {target_distance} for len {len}"
        )));
    }
    let words = len.div_ceil(64);
    let tail_mask = if len % 64 == 0 { u64::MAX } else { (1u64 << (len % 64)) - 1 };
    let mut rng = stream(seed, &[len as u64, target_distance as u64]);
    let mut kept: Vec<Vec<u64>> = Vec::new();
    let mut draws = 0;
    while draws < budget && kept.len() < max_size {
        draws += 1;
        let mut v: Vec<u64> = (0..words).map(|_| rng.random()).collect();
        v[words - 1] &= tail_mask;
        if kept.iter().all(|w| hamming(&v, w) >= target_distance) {
            kept.push(v);
        }
    }
    if kept.len() < 2 {
        return Err(Error::PackingBudget { kept: kept.len(), target: target_distance });
    }
    let min_distance = certify_min_distance(&kept);
    Ok(PackingSigns {
        len,
        target_distance,
        min_distance,
        draws,
        vectors: kept,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PackingParams {
    pub n_cells: usize,
    pub d: usize,
    pub s: f64,
    /// Integrability index of the seminorm estimate.
    pub p: f64,
    /// Norm of the separation.
    pub q: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Members whose seminorm is estimated (the first ones in draw order).
    pub seminorm_members: usize,
}

impl PackingParams {
    pub fn new(n_cells: usize, d: usize, s: f64, p: f64, q: f64, gamma: f64) -> Self {
        Self {
            n_cells,
            d,
            s,
            p,
            q,
            gamma,
            seed: 0,
            seminorm_members: usize::MAX,
        }
    }

    pub fn cells(&self) -> usize {
        self.n_cells.pow(self.d as u32)
    }

    fn seminorm_levels(&self) -> u32 {
        (usize::BITS - self.n_cells.leading_zeros()) + 3
    }

    fn seminorm_order(&self) -> usize {
        self.s.floor() as usize + 1
    }
}

/// `sum_i sign_i * phi_i` with `phi_i` the bump on cell `i` (lexicographic order).
#[derive(Clone, Debug)]
pub struct SignedBumps {
    n_cells: usize,
    d: usize,
    amplitude: f64,
    signs: Vec<f64>,
}

impl SignedBumps {
    pub fn new(n_cells: usize, d: usize, amplitude: f64, signs: Vec<f64>) -> Result<Self> {
        let cells = n_cells.pow(d as u32);
        if signs.len() != cells {
            return Err(Error::LengthMismatch { expected: cells, found: signs.len() });
        }
        Ok(Self { n_cells, d, amplitude, signs })
    }
}

impl RealFunction for SignedBumps {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let n = self.n_cells as f64;
        let mut lex = 0;
        let mut value = self.amplitude;
        for &xi in x {
            let scaled = xi * n;
            let cell = (scaled.floor().max(0.0) as usize).min(self.n_cells - 1);
            lex = lex * self.n_cells + cell;
            value *= mollifier_1d(scaled - cell as f64);
        }
        value * self.signs[lex]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PackingFamily {
    pub params: PackingParams,
    /// `gamma * n_cells^-s`.
    pub amplitude: f64,
    pub signs: PackingSigns,
    /// Measured `min ||f_i - f_j||_{L_q}` over pairs at the minimum Hamming distance.
    pub min_separation: f64,
    /// `(1/4)^(1/q) * 2 * amplitude * ||mollifier||_{L_q}`: the separation any
    /// two members at Hamming distance `P/4` must have.
    pub separation_bound: f64,
    pub max_seminorm: f64,
    pub seminorm_checked: usize,
}

impl PackingFamily {
    pub fn size(&self) -> usize {
        self.signs.size()
    }

    pub fn member(&self, v: usize) -> FunctionOracle {
        let bumps = SignedBumps::new(self.params.n_cells, self.params.d, self.amplitude, self.signs.signs(v))
            .expect("sign vector length matches the cell count");
        FunctionOracle::from_function(format!("packing member {v}"), std::sync::Arc::new(bumps))
    }
}

fn quadrature_for(params: &PackingParams) -> QuadratureSpec {
    QuadratureSpec::new(params.seminorm_levels() + 2, 4)
}

fn member_seminorm(params: &PackingParams, amplitude: f64, signs: Vec<f64>) -> Result<f64> {
    let f = SignedBumps::new(params.n_cells, params.d, amplitude, signs)?;
    besov_seminorm_pwp(
        &f,
        params.s,
        params.p,
        params.seminorm_order(),
        params.seminorm_levels(),
        &quadrature_for(params),
    )
}

/// Builds the signed-bump family on `n_cells^d` cells with signs from
/// `packing_signs(P, ceil(P/4))`.
pub fn build_packing_family(params: &PackingParams) -> Result<PackingFamily> {
    if !(params.gamma > 0.0) {
        return Err(Error::Precondition(format!("gamma must be positive, got {}", params.gamma)));
    }
    if params.n_cells == 0 || params.d == 0 {
        return Err(Error::InvalidArgument("need at least one cell and one dimension".into()));
    }
    let cells = params.cells();
    let signs = packing_signs(cells, cells.div_ceil(4).max(1), params.seed)?;
    let amplitude = params.gamma * (params.n_cells as f64).powf(-params.s);

    let spec = QuadratureSpec::new(params.seminorm_levels() + 1, 4);
    let mut closest = Vec::new();
    'outer: for i in 0..signs.size() {
        for j in i + 1..signs.size() {
            if hamming(&signs.vectors[i], &signs.vectors[j]) == signs.min_distance {
                closest.push((i, j));
                if closest.len() == 4 {
                    break 'outer;
                }
            }
        }
    }
    let min_separation = closest
        .iter()
        .map(|&(i, j)| {
            let f = SignedBumps::new(params.n_cells, params.d, amplitude, signs.signs(i))?;
            let g = SignedBumps::new(params.n_cells, params.d, amplitude, signs.signs(j))?;
            lq_distance(&f, &g, params.q, &spec)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let separation_bound = 0.25f64.powf(1.0 / params.q) * 2.0 * amplitude * mollifier_lq_norm(params.q, params.d);

    let checked = signs.size().min(params.seminorm_members);
    let max_seminorm = (0..checked)
        .into_par_iter()
        .map(|v| member_seminorm(params, amplitude, signs.signs(v)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    Ok(PackingFamily {
        params: *params,
        amplitude,
        signs,
        min_separation,
        separation_bound,
        max_seminorm,
        seminorm_checked: checked,
    })
}

/// Largest amplitude with `probe(gamma) <= 1` located by bracketing and
/// bisection, then halved.
pub fn calibrate_amplitude(mut probe: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let (mut lo, mut hi) = (1.0, 1.0);
    if probe(1.0)? <= 1.0 {
        while probe(hi)? <= 1.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::Precondition("seminorm estimate does not grow with the amplitude".into()));
            }
        }
    } else {
        while probe(lo)? > 1.0 {
            hi = lo;
            lo *= 0.5;
            if lo < 1e-12 {
                return Err(Error::Precondition("seminorm estimate stays above 1".into()));
            }
        }
    }
    while hi / lo > 1.0 + 1e-4 {
        let mid = (lo * hi).sqrt();
        if probe(mid)? <= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * lo)
}

/// Calibrates `gamma` against the seminorm of the first `probe_members`
/// members, then builds the family with that `gamma`.
pub fn calibrated_packing_family(params: &PackingParams, probe_members: usize) -> Result<PackingFamily> {
    let cells = params.cells();
    let signs = packing_signs(cells, cells.div_ceil(4).max(1), params.seed)?;
    let probes: Vec<Vec<f64>> = (0..signs.size().min(probe_members.max(1))).map(|v| signs.signs(v)).collect();
    let gamma = calibrate_amplitude(|gamma| {
        let amplitude = gamma * (params.n_cells as f64).powf(-params.s);
        Ok(probes
            .par_iter()
            .map(|sg| member_seminorm(params, amplitude, sg.clone()))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max))
    })?;
    build_packing_family(&PackingParams { gamma, ..*params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_packing() {
        let p = packing_signs(4, 2, 1).unwrap();
        assert!(p.size() >= 4);
        // the even-weight code of size 8 is the largest at distance 2
        assert!(p.size() <= 8);
        assert!(p.min_distance >= 2);
    }

    #[test]
    fn sixteen_cells() {
        let p = packing_signs(16, 4, 3).unwrap();
        assert!(p.size() >= 4, "{}", p.size());
        assert!(p.min_distance >= 4);
        assert_eq!(certify_min_distance(&p.vectors), p.min_distance);
    }

    #[test]
    fn degenerate_lengths() {
        assert!(matches!(packing_signs(1, 1, 0), Err(Error::PackingBudget { .. })));
        assert!(packing_signs(8, 5, 0).is_err());
    }

    #[test]
    fn signed_bumps_layout() {
        let f = SignedBumps::new(2, 2, 1.0, vec![1.0, -1.0, 1.0, 1.0]).unwrap();
        assert_eq!(f.eval(&[0.25, 0.75]), -1.0);
        assert_eq!(f.eval(&[0.25, 0.25]), 1.0);
        assert_eq!(f.eval(&[0.5, 0.3]), 0.0);
    }

    #[test]
    fn family_separation_and_linearity() {
        let params = PackingParams {
            seminorm_members: 4,
            ..PackingParams::new(8, 1, 2.0, 2.0, 2.0, 1.0)
        };
        let a = build_packing_family(&params).unwrap();
        assert!(a.min_separation >= a.separation_bound * (1.0 - 1e-6));
        let b = build_packing_family(&PackingParams { gamma: 3.0, ..params }).unwrap();
        assert!((b.min_separation / a.min_separation - 3.0).abs() < 1e-9);
        assert!((b.max_seminorm / a.max_seminorm - 3.0).abs() < 1e-6);
    }

    #[test]
    fn calibration_brings_seminorm_below_one() {
        let params = PackingParams {
            seminorm_members: 16,
            ..PackingParams::new(8, 1, 2.0, 2.0, 2.0, 1.0)
        };
        let fam = calibrated_packing_family(&params, 4).unwrap();
        assert!(fam.max_seminorm <= 1.0, "{}", fam.max_seminorm);
        assert!(fam.max_seminorm > 0.2);
    }

    #[test]
    fn bisection_finds_linear_root() {
        let g = calibrate_amplitude(|x| Ok(4.0 * x)).unwrap();
        assert!((g - 0.125).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn certified_distance_is_respected(len in 4usize..40, seed in any::<u64>()) {
            let target = len / 4;
            let p = packing_signs_with_budget(len, target.max(1), 2_000, 256, seed).unwrap();
            prop_assert!(p.min_distance >= target);
            prop_assert_eq!(certify_min_distance(&p.vectors), p.min_distance);
        }
    }
}
