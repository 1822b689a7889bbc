//! Polynomial spaces `P_r` in `d` variables, local bases orthonormal for the
//! discrete sampling measure of a cube, and per-cube least-squares fits.
//!
//! Every basis is built once on the reference cube `[0,1)^d` with the tensor
//! grid `{0, 1/N, ..., 1 - 1/N}^d` and mapped affinely onto physical cubes.
//! The reference polynomials are tensor products of orthonormal shifted
//! Legendre polynomials truncated to total degree `< r`; a single Cholesky
//! factor of their discrete Gram matrix turns them into the orthonormal system.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use parking_lot::Mutex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{for_each_tensor_node, UnitRule};

/// Smallest admissible exponent for the normalized quasi-norms.
pub const Q_FLOOR: f64 = 0.1;

/// Gram matrices with a smaller eigenvalue are treated as singular.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// `dim P_r = binom(d + r - 1, d)`.
pub fn dim_poly(r: usize, d: usize) -> Result<usize> {
    if r < 1 || d < 1 {
        return Err(Error::Precondition(format!(
            "polynomial order and dimension must be >= 1, got r = {r}, d = {d}"
        )));
    }
    // binom(d + r - 1, k) built up incrementally; each step is an exact division.
    let mut acc: u128 = 1;
    for k in 1..=d as u128 {
        acc = acc
            .checked_mul(r as u128 - 1 + k)
            .ok_or_else(|| Error::InvalidArgument(format!("dim P_{r} in {d} variables overflows")))?
            / k;
    }
    usize::try_from(acc)
        .map_err(|_| Error::InvalidArgument(format!("dim P_{r} in {d} variables overflows")))
}

/// Exponent vectors with total degree `< r`, ordered by total degree and then
/// lexicographically (descending in the first coordinate).
pub fn multi_indices(r: usize, d: usize) -> Vec<Vec<u32>> {
    fn fill(prefix: &mut Vec<u32>, left: usize, budget: u32, out: &mut Vec<Vec<u32>>) {
        if left == 1 {
            prefix.push(budget);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=budget).rev() {
            prefix.push(first);
            fill(prefix, left - 1, budget - first, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for degree in 0..r as u32 {
        fill(&mut Vec::with_capacity(d), d, degree, &mut out);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolySpaceSpec {
    pub r: usize,
    pub d: usize,
    pub rho: usize,
}

impl PolySpaceSpec {
    pub fn new(r: usize, d: usize) -> Result<Self> {
        Ok(Self {
            r,
            d,
            rho: dim_poly(r, d)?,
        })
    }
}

/// Axis-aligned cube `origin + [0, side)^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub origin: Vec<f64>,
    pub side: f64,
}

impl Cube {
    pub fn unit(d: usize) -> Self {
        Self {
            origin: vec![0.0; d],
            side: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim() as i32)
    }

    pub fn to_reference(&self, x: &[f64], out: &mut [f64]) {
        for ((o, &xi), &a) in out.iter_mut().zip(x).zip(&self.origin) {
            *o = (xi - a) / self.side;
        }
    }

    pub fn from_reference(&self, u: &[f64], out: &mut [f64]) {
        for ((o, &ui), &a) in out.iter_mut().zip(u).zip(&self.origin) {
            *o = a + self.side * ui;
        }
    }
}

/// Uniform measure on the `N^d` tensor sites of a cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub cube: Cube,
    pub per_axis: usize,
}

impl DiscreteMeasure {
    pub fn new(cube: Cube, per_axis: usize) -> Self {
        Self { cube, per_axis }
    }

    pub fn site_count(&self) -> usize {
        self.per_axis.pow(self.cube.dim() as u32)
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.site_count() as f64
    }

    /// Sites in lexicographic order, `origin + side * (i_1, ..., i_d) / N`.
    pub fn sites(&self) -> Vec<Vec<f64>> {
        let reference = tensor_sites(self.per_axis, self.cube.dim());
        reference
            .chunks_exact(self.cube.dim())
            .map(|u| {
                let mut x = vec![0.0; u.len()];
                self.cube.from_reference(u, &mut x);
                x
            })
            .collect()
    }
}

fn tensor_sites(per_axis: usize, d: usize) -> Vec<f64> {
    let count = per_axis.pow(d as u32);
    let mut out = Vec::with_capacity(count * d);
    let mut idx = vec![0usize; d];
    for _ in 0..count {
        out.extend(idx.iter().map(|&i| i as f64 / per_axis as f64));
        for axis in (0..d).rev() {
            idx[axis] += 1;
            if idx[axis] < per_axis {
                break;
            }
            idx[axis] = 0;
        }
    }
    out
}

/// `sqrt(2k+1) P_k(2x - 1)` for `k < out.len()`, orthonormal on `[0, 1]`.
fn shifted_legendre(x: f64, out: &mut [f64]) {
    let t = 2.0 * x - 1.0;
    let mut prev = 1.0;
    let mut cur = t;
    for (k, slot) in out.iter_mut().enumerate() {
        let value = match k {
            0 => 1.0,
            1 => t,
            _ => {
                let kf = k as f64;
                let next = ((2.0 * kf - 1.0) * t * cur - (kf - 1.0) * prev) / kf;
                prev = cur;
                cur = next;
                next
            }
        };
        *slot = value * ((2 * k + 1) as f64).sqrt();
    }
}

/// Orthonormal system for `P_r` on the reference cube with respect to the
/// uniform measure on a fixed set of sites.
#[derive(Debug)]
pub struct ReferenceBasis {
    spec: PolySpaceSpec,
    per_axis: Option<usize>,
    exponents: Vec<u32>,
    /// Row `j` holds the reference-polynomial coefficients of `Q_j` (lower triangular).
    transform: Vec<f64>,
    /// `site_values[i * rho + j] = Q_j(z_i)`.
    site_values: Vec<f64>,
}

impl ReferenceBasis {
    /// Basis for the tensor sites `{0, 1/N, ..., 1 - 1/N}^d`; requires `N^d > rho`.
    pub fn tensor(spec: PolySpaceSpec, per_axis: usize) -> Result<Self> {
        let count = (per_axis as u128).checked_pow(spec.d as u32).unwrap_or(u128::MAX);
        if count <= spec.rho as u128 {
            return Err(Error::Precondition(format!(
                "need N^d > rho for a least-squares fit, got N = {per_axis}, d = {}, rho = {}",
                spec.d, spec.rho
            )));
        }
        let sites = tensor_sites(per_axis, spec.d);
        let mut basis = Self::from_reference_sites(spec, &sites)?;
        basis.per_axis = Some(per_axis);
        Ok(basis)
    }

    /// Basis for arbitrary reference sites (flat, `d` coordinates per site).
    /// Only asks for a nonsingular Gram matrix, so square systems are allowed.
    pub fn from_reference_sites(spec: PolySpaceSpec, sites: &[f64]) -> Result<Self> {
        let d = spec.d;
        let rho = spec.rho;
        let exponents: Vec<u32> = multi_indices(spec.r, d).into_iter().flatten().collect();
        let count = sites.len() / d;
        let mut raw = vec![0.0; count * rho];
        let mut table = vec![0.0; d * spec.r];
        for (i, z) in sites.chunks_exact(d).enumerate() {
            reference_values(spec, &exponents, z, &mut table, &mut raw[i * rho..(i + 1) * rho]);
        }
        let mut gram = DMatrix::<f64>::zeros(rho, rho);
        for row in raw.chunks_exact(rho) {
            for a in 0..rho {
                for b in 0..=a {
                    gram[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..rho {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        gram /= count as f64;
        let transform = orthonormal_transform(&gram)?;
        let mut site_values = vec![0.0; count * rho];
        for (phi, q) in raw.chunks_exact(rho).zip(site_values.chunks_exact_mut(rho)) {
            apply_transform(&transform, rho, phi, q);
        }
        Ok(Self {
            spec,
            per_axis: None,
            exponents,
            transform,
            site_values,
        })
    }

    pub fn spec(&self) -> PolySpaceSpec {
        self.spec
    }

    pub fn rho(&self) -> usize {
        self.spec.rho
    }

    /// Sites per axis for tensor bases.
    pub fn per_axis(&self) -> Option<usize> {
        self.per_axis
    }

    pub fn site_count(&self) -> usize {
        self.site_values.len() / self.spec.rho
    }

    pub fn site_values(&self) -> &[f64] {
        &self.site_values
    }

    /// `Q_j(z_i)` for site `i`.
    pub fn at_site(&self, i: usize) -> &[f64] {
        &self.site_values[i * self.spec.rho..(i + 1) * self.spec.rho]
    }

    /// Coefficients of `Q_j` in the reference Legendre system, row-major `rho x rho`.
    pub fn transform(&self) -> &[f64] {
        &self.transform
    }

    /// Writes `Q_j(u)` for every `j`, `u` in reference coordinates.
    pub fn eval_all(&self, u: &[f64], out: &mut [f64]) {
        let rho = self.spec.rho;
        let mut table = vec![0.0; self.spec.d * self.spec.r];
        let mut phi = vec![0.0; rho];
        reference_values(self.spec, &self.exponents, u, &mut table, &mut phi);
        apply_transform(&self.transform, rho, &phi, out);
    }

    /// `sum_j coeffs[j] Q_j(u)`.
    pub fn eval_combination(&self, coeffs: &[f64], u: &[f64]) -> f64 {
        let mut q = vec![0.0; self.spec.rho];
        self.eval_all(u, &mut q);
        q.iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }

    /// Discrete inner products `<values, Q_j>` with the uniform site measure.
    pub fn project(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.site_count() {
            return Err(Error::LengthMismatch {
                expected: self.site_count(),
                found: values.len(),
            });
        }
        let rho = self.spec.rho;
        let mut coeffs = vec![0.0; rho];
        for (v, q) in values.iter().zip(self.site_values.chunks_exact(rho)) {
            for (c, qj) in coeffs.iter_mut().zip(q) {
                *c += v * qj;
            }
        }
        let w = 1.0 / self.site_count() as f64;
        coeffs.iter_mut().for_each(|c| *c *= w);
        Ok(coeffs)
    }
}

fn reference_values(
    spec: PolySpaceSpec,
    exponents: &[u32],
    u: &[f64],
    table: &mut [f64],
    out: &mut [f64],
) {
    let r = spec.r;
    for (axis, &x) in u.iter().enumerate() {
        shifted_legendre(x, &mut table[axis * r..(axis + 1) * r]);
    }
    for (slot, alpha) in out.iter_mut().zip(exponents.chunks_exact(spec.d)) {
        *slot = alpha
            .iter()
            .enumerate()
            .map(|(axis, &k)| table[axis * r + k as usize])
            .product();
    }
}

fn apply_transform(transform: &[f64], rho: usize, phi: &[f64], out: &mut [f64]) {
    for (j, slot) in out.iter_mut().enumerate() {
        let row = &transform[j * rho..j * rho + j + 1];
        *slot = row.iter().zip(phi).map(|(t, p)| t * p).sum();
    }
}

/// Inverse Cholesky factor `T` with `T G T^t = I`, row-major.
pub fn orthonormal_transform(gram: &DMatrix<f64>) -> Result<Vec<f64>> {
    let min_eigenvalue = gram
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(min_eigenvalue >= RANK_TOLERANCE) {
        return Err(Error::RankDeficient { min_eigenvalue });
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficient { min_eigenvalue })?;
    let inv = chol
        .l()
        .try_inverse()
        .ok_or(Error::RankDeficient { min_eigenvalue })?;
    let rho = gram.nrows();
    let mut out = vec![0.0; rho * rho];
    for j in 0..rho {
        for a in 0..=j {
            out[j * rho + a] = inv[(j, a)];
        }
    }
    Ok(out)
}

type BasisKey = (usize, usize, usize);

fn basis_cache() -> &'static Mutex<HashMap<BasisKey, Arc<ReferenceBasis>>> {
    static CACHE: OnceLock<Mutex<HashMap<BasisKey, Arc<ReferenceBasis>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cached tensor basis for `(r, d, N)`. The first caller computes it while
/// holding the cache lock; later callers share the same `Arc`.
pub fn reference_basis(spec: PolySpaceSpec, per_axis: usize) -> Result<Arc<ReferenceBasis>> {
    let key = (spec.r, spec.d, per_axis);
    let mut cache = basis_cache().lock();
    if let Some(b) = cache.get(&key) {
        return Ok(b.clone());
    }
    let basis = Arc::new(ReferenceBasis::tensor(spec, per_axis)?);
    cache.insert(key, basis.clone());
    Ok(basis)
}

/// Orthonormal basis `Q_{I,j}` of a physical cube.
#[derive(Clone, Debug)]
pub struct OrthonormalLocalBasis {
    pub measure: DiscreteMeasure,
    reference: Arc<ReferenceBasis>,
}

impl OrthonormalLocalBasis {
    pub fn new(measure: DiscreteMeasure, reference: Arc<ReferenceBasis>) -> Self {
        Self { measure, reference }
    }

    pub fn spec(&self) -> PolySpaceSpec {
        self.reference.spec()
    }

    pub fn reference(&self) -> &Arc<ReferenceBasis> {
        &self.reference
    }

    /// Writes `Q_{I,j}(x)` for every `j`, `x` in physical coordinates.
    pub fn eval_all(&self, x: &[f64], out: &mut [f64]) {
        let mut u = vec![0.0; x.len()];
        self.measure.cube.to_reference(x, &mut u);
        self.reference.eval_all(&u, out);
    }
}

pub fn orthonormalize(spec: PolySpaceSpec, measure: DiscreteMeasure) -> Result<OrthonormalLocalBasis> {
    if measure.cube.dim() != spec.d {
        return Err(Error::InvalidArgument(format!(
            "cube dimension {} does not match polynomial dimension {}",
            measure.cube.dim(),
            spec.d
        )));
    }
    let reference = reference_basis(spec, measure.per_axis)?;
    Ok(OrthonormalLocalBasis::new(measure, reference))
}

/// `sum_j coeffs[j] Q_{I,j}` on one cube.
#[derive(Clone, Debug)]
pub struct LocalPolynomial {
    pub basis: OrthonormalLocalBasis,
    pub coeffs: Vec<f64>,
}

impl LocalPolynomial {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut u = vec![0.0; x.len()];
        self.basis.measure.cube.to_reference(x, &mut u);
        self.basis.reference.eval_combination(&self.coeffs, &u)
    }

    fn eval_reference(&self, u: &[f64]) -> f64 {
        self.basis.reference.eval_combination(&self.coeffs, u)
    }
}

/// Least-squares fit from `P_r` to values at the measure's sites.
pub fn project_ls(values: &[f64], basis: &OrthonormalLocalBasis) -> Result<LocalPolynomial> {
    Ok(LocalPolynomial {
        basis: basis.clone(),
        coeffs: basis.reference.project(values)?,
    })
}

/// Normalized norm `|I|^{-1/q} ||poly||_{L_q(I)}`.
///
/// Finite `q` uses composite Gauss–Legendre with `r + 2` nodes on each of 4
/// subcells per axis (exact for even integer `q`). `q = inf` takes the maximum
/// over a closed uniform grid with [`sup_grid_points`] intervals per axis.
pub fn norm_star(poly: &LocalPolynomial, q: f64) -> Result<f64> {
    if !(q >= Q_FLOOR) {
        return Err(Error::InvalidArgument(format!(
            "exponent q = {q} is below the floor {Q_FLOOR}"
        )));
    }
    let spec = poly.basis.spec();
    let lo = vec![0.0; spec.d];
    let width = vec![1.0; spec.d];
    if q.is_infinite() {
        let rule = UnitRule::uniform_closed(sup_grid_points(spec.d));
        let mut max = 0.0f64;
        for_each_tensor_node(&rule, &lo, &width, |u, _| {
            max = max.max(poly.eval_reference(u).abs());
        });
        return Ok(max);
    }
    let rule = UnitRule::composite(spec.r + 2, 4);
    let mut acc = 0.0;
    for_each_tensor_node(&rule, &lo, &width, |u, w| {
        acc += w * poly.eval_reference(u).abs().powf(q);
    });
    Ok(acc.powf(1.0 / q))
}

/// Intervals per axis used for sup-norms of single polynomials.
pub fn sup_grid_points(d: usize) -> usize {
    match d {
        1 => 1024,
        2 => 96,
        3 => 24,
        _ => 8,
    }
}

/// `N^{-d/q} ||(Q(z))_z||_{l_q}`, the normalized discrete norm over the sites.
pub fn discrete_norm_star(poly: &LocalPolynomial, q: f64) -> f64 {
    let reference = &poly.basis.reference;
    let rho = reference.rho();
    let values = reference
        .site_values()
        .chunks_exact(rho)
        .map(|qz| qz.iter().zip(&poly.coeffs).map(|(a, b)| a * b).sum::<f64>().abs());
    if q.is_infinite() {
        return values.fold(0.0, f64::max);
    }
    let count = reference.site_count() as f64;
    (values.map(|v| v.powf(q)).sum::<f64>() / count).powf(1.0 / q)
}

/// Largest of `ratio` and `1/ratio` over the three pairs formed by
/// [`norm_star`], [`discrete_norm_star`] and `||coeffs||_{l_q}`, taken over
/// every coefficient sample and every sites-per-axis count in `per_axis`.
pub fn equivalence_bracket(spec: PolySpaceSpec, q: f64, per_axis: &[usize], samples: &[Vec<f64>]) -> Result<f64> {
    let brackets = per_axis
        .par_iter()
        .map(|&n| {
            let measure = DiscreteMeasure::new(Cube::unit(spec.d), n);
            let basis = orthonormalize(spec, measure)?;
            let mut worst = 1.0f64;
            for coeffs in samples {
                if coeffs.len() != spec.rho {
                    return Err(Error::LengthMismatch { expected: spec.rho, found: coeffs.len() });
                }
                let poly = LocalPolynomial { basis: basis.clone(), coeffs: coeffs.clone() };
                let continuous = norm_star(&poly, q)?;
                let discrete = discrete_norm_star(&poly, q);
                let sequence = if q.is_infinite() {
                    coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()))
                } else {
                    coeffs.iter().map(|c| c.abs().powf(q)).sum::<f64>().powf(1.0 / q)
                };
                for (a, b) in [(continuous, discrete), (continuous, sequence), (discrete, sequence)] {
                    worst = worst.max(a / b).max(b / a);
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(brackets.into_iter().fold(1.0, f64::max))
}
