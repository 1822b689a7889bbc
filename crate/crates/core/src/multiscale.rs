//! Dyadic cubes, level projections `S_k`, the multiscale corrections
//! `T_k = S_k - S_{k-1}` and their coefficient vectors `nu_k`.
//!
//! Level `k` fits live on cubes of side `2^-k`, each holding `N_k^d` grid
//! sites with `N_k = 2^(n-k)`. Coefficients are stored flat per level in
//! (cube lex index, basis index) order.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use parking_lot::Mutex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_obs::{ObservationSet, RealFunction, DEFAULT_MAX_POINTS};
use crate::polybasis::{reference_basis, Cube, PolySpaceSpec, ReferenceBasis};

/// Half-open cube `prod_j [idx_j 2^-k, (idx_j + 1) 2^-k)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicCube {
    pub k: u32,
    pub idx: Vec<u64>,
}

impl DyadicCube {
    pub fn new(k: u32, idx: Vec<u64>) -> Result<Self> {
        let side = 1u64.checked_shl(k).unwrap_or(0);
        if k >= 63 || idx.iter().any(|&i| i >= side) {
            return Err(Error::InvalidArgument(format!(
                "cube index {idx:?} is out of range at level {k}"
            )));
        }
        Ok(Self { k, idx })
    }

    pub fn root(d: usize) -> Self {
        Self {
            k: 0,
            idx: vec![0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.idx.len()
    }

    pub fn side(&self) -> f64 {
        (-(self.k as f64)).exp2()
    }

    pub fn origin(&self) -> Vec<f64> {
        let h = self.side();
        self.idx.iter().map(|&i| i as f64 * h).collect()
    }

    pub fn as_cube(&self) -> Cube {
        Cube {
            origin: self.origin(),
            side: self.side(),
        }
    }

    /// Position among `cubes_at_level(k, d)`.
    pub fn lex_index(&self) -> usize {
        self.idx
            .iter()
            .fold(0usize, |acc, &i| (acc << self.k) | i as usize)
    }

    pub fn from_lex(k: u32, d: usize, mut lex: usize) -> Self {
        let mask = (1usize << k) - 1;
        let mut idx = vec![0u64; d];
        for slot in idx.iter_mut().rev() {
            *slot = (lex & mask) as u64;
            lex >>= k;
        }
        Self { k, idx }
    }

    pub fn parent(&self) -> Option<Self> {
        (self.k > 0).then(|| Self {
            k: self.k - 1,
            idx: self.idx.iter().map(|&i| i >> 1).collect(),
        })
    }

    /// Which child of its parent this cube is, first coordinate most significant.
    pub fn orthant(&self) -> usize {
        self.idx
            .iter()
            .fold(0usize, |acc, &i| (acc << 1) | (i & 1) as usize)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let h = self.side();
        x.iter().zip(&self.idx).all(|(&xi, &i)| {
            let lo = i as f64 * h;
            xi >= lo && xi < lo + h
        })
    }
}

fn level_count(k: u32, d: usize) -> Result<usize> {
    (k as u64)
        .checked_mul(d as u64)
        .filter(|&bits| bits < usize::BITS as u64)
        .map(|bits| 1usize << bits)
        .filter(|&c| c <= DEFAULT_MAX_POINTS)
        .ok_or(Error::Capacity {
            n: k,
            d,
            limit: DEFAULT_MAX_POINTS,
        })
}

/// All `2^(k d)` cubes of level `k` in lexicographic order.
pub fn cubes_at_level(k: u32, d: usize) -> Result<Vec<DyadicCube>> {
    let count = level_count(k, d)?;
    Ok((0..count).map(|lex| DyadicCube::from_lex(k, d, lex)).collect())
}

/// The level-`k` cube containing `x`. Coordinates equal to 1 belong to the
/// last cube on that axis.
pub fn locate(x: &[f64], k: u32) -> Result<DyadicCube> {
    if x.iter().any(|&xi| !(0.0..=1.0).contains(&xi)) {
        return Err(Error::OutOfDomain(x.to_vec()));
    }
    let cells = (1u64 << k) as f64;
    let last = (1u64 << k) - 1;
    let idx = x
        .iter()
        .map(|&xi| ((xi * cells).floor() as u64).min(last))
        .collect();
    Ok(DyadicCube { k, idx })
}

/// Function in `S_k(r)`: one local polynomial per level-`k` cube, stored as
/// coefficients in the orthonormal bases for `N` sites per axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "PiecewisePolyRecord", try_from = "PiecewisePolyRecord")]
pub struct PiecewisePoly {
    level: u32,
    per_axis: usize,
    basis: Arc<ReferenceBasis>,
    coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PiecewisePolyRecord {
    level: u32,
    d: usize,
    r: usize,
    rho: usize,
    per_axis: usize,
    coeffs: Vec<f64>,
}

impl From<PiecewisePoly> for PiecewisePolyRecord {
    fn from(p: PiecewisePoly) -> Self {
        let spec = p.basis.spec();
        Self {
            level: p.level,
            d: spec.d,
            r: spec.r,
            rho: spec.rho,
            per_axis: p.per_axis,
            coeffs: p.coeffs,
        }
    }
}

impl TryFrom<PiecewisePolyRecord> for PiecewisePoly {
    type Error = Error;

    fn try_from(rec: PiecewisePolyRecord) -> Result<Self> {
        let spec = PolySpaceSpec::new(rec.r, rec.d)?;
        if spec.rho != rec.rho {
            return Err(Error::Decode(format!(
                "rho = {} does not match r = {}, d = {}",
                rec.rho, rec.r, rec.d
            )));
        }
        PiecewisePoly::from_coeffs(rec.level, spec, rec.per_axis, rec.coeffs)
    }
}

impl PiecewisePoly {
    pub fn from_coeffs(level: u32, spec: PolySpaceSpec, per_axis: usize, coeffs: Vec<f64>) -> Result<Self> {
        let cubes = level_count(level, spec.d)?;
        let expected = cubes * spec.rho;
        if coeffs.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: coeffs.len(),
            });
        }
        Ok(Self {
            level,
            per_axis,
            basis: reference_basis(spec, per_axis)?,
            coeffs,
        })
    }

    pub fn zero(level: u32, spec: PolySpaceSpec, per_axis: usize) -> Result<Self> {
        let len = level_count(level, spec.d)? * spec.rho;
        Self::from_coeffs(level, spec, per_axis, vec![0.0; len])
    }

    /// Cellwise least-squares fit of `f` sampled at `per_axis^d` sites per cube.
    pub fn fit(f: &dyn RealFunction, level: u32, r: usize, per_axis: usize) -> Result<Self> {
        let d = f.dim();
        let spec = PolySpaceSpec::new(r, d)?;
        let basis = reference_basis(spec, per_axis)?;
        let cubes = level_count(level, d)?;
        let rho = spec.rho;
        let sites: Vec<Vec<f64>> = (0..basis.site_count())
            .map(|i| {
                let mut u = vec![0.0; d];
                let mut rest = i;
                for slot in u.iter_mut().rev() {
                    *slot = (rest % per_axis) as f64 / per_axis as f64;
                    rest /= per_axis;
                }
                u
            })
            .collect();
        let mut coeffs = vec![0.0; cubes * rho];
        coeffs
            .par_chunks_mut(rho)
            .enumerate()
            .try_for_each(|(lex, out)| -> Result<()> {
                let cube = DyadicCube::from_lex(level, d, lex).as_cube();
                let mut x = vec![0.0; d];
                let values: Vec<f64> = sites
                    .iter()
                    .map(|u| {
                        cube.from_reference(u, &mut x);
                        f.eval(&x)
                    })
                    .collect();
                out.copy_from_slice(&basis.project(&values)?);
                Ok(())
            })?;
        Ok(Self {
            level,
            per_axis,
            basis,
            coeffs,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn spec(&self) -> PolySpaceSpec {
        self.basis.spec()
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn cell(&self, lex: usize) -> &[f64] {
        let rho = self.spec().rho;
        &self.coeffs[lex * rho..(lex + 1) * rho]
    }

    /// Value at `x` in the closed unit cube (faces at 1 use the last cell).
    pub fn eval_pwp(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.spec().d {
            return Err(Error::LengthMismatch {
                expected: self.spec().d,
                found: x.len(),
            });
        }
        let cube = locate(x, self.level)?;
        let scale = (self.level as f64).exp2();
        let u: Vec<f64> = x
            .iter()
            .zip(&cube.idx)
            .map(|(&xi, &i)| xi * scale - i as f64)
            .collect();
        Ok(self
            .basis
            .eval_combination(self.cell(cube.lex_index()), &u))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.spec();
        let header = [
            self.level as u64,
            spec.d as u64,
            spec.r as u64,
            spec.rho as u64,
            self.per_axis as u64,
        ];
        encode(&header, &self.coeffs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, coeffs) = decode::<5>(bytes)?;
        let [level, d, r, rho, per_axis] = header.map(|v| v as usize);
        PiecewisePolyRecord {
            level: u32::try_from(level).map_err(|_| Error::Decode("level out of range".into()))?,
            d,
            r,
            rho,
            per_axis,
            coeffs,
        }
        .try_into()
    }
}

impl RealFunction for PiecewisePoly {
    fn dim(&self) -> usize {
        self.spec().d
    }

    /// `NaN` outside the closed unit cube.
    fn eval(&self, x: &[f64]) -> f64 {
        self.eval_pwp(x).unwrap_or(f64::NAN)
    }
}

fn encode(header: &[u64], values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (header.len() + values.len()));
    for h in header {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode<const H: usize>(bytes: &[u8]) -> Result<([u64; H], Vec<f64>)> {
    if bytes.len() < 8 * H || bytes.len() % 8 != 0 {
        return Err(Error::Decode(format!("unexpected byte length {}", bytes.len())));
    }
    let words: Vec<[u8; 8]> = bytes
        .chunks_exact(8)
        .map(|c| c.try_into().expect("chunk of 8"))
        .collect();
    let mut header = [0u64; H];
    for (h, w) in header.iter_mut().zip(&words) {
        *h = u64::from_le_bytes(*w);
    }
    let values = words[H..].iter().map(|w| f64::from_le_bytes(*w)).collect();
    Ok((header, values))
}

/// Level-`k` coefficients `(c_{I,j})`, length `rho 2^(k d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub level: u32,
    pub d: usize,
    pub r: usize,
    pub rho: usize,
    pub entries: Vec<f64>,
}

impl CoefficientVector {
    pub fn zeros(level: u32, spec: PolySpaceSpec) -> Result<Self> {
        Ok(Self {
            level,
            d: spec.d,
            r: spec.r,
            rho: spec.rho,
            entries: vec![0.0; level_count(level, spec.d)? * spec.rho],
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, cube: &DyadicCube, j: usize) -> f64 {
        self.entries[cube.lex_index() * self.rho + j]
    }

    /// `(L^-1 sum_i |v_i|^q)^(1/q)`, or the max for `q = inf`.
    pub fn norm_star(&self, q: f64) -> f64 {
        weighted_norm(&self.entries, q)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = [self.level as u64, self.d as u64, self.r as u64, self.rho as u64];
        encode(&header, &self.entries)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ([level, d, r, rho], entries) = decode::<4>(bytes)?;
        let spec = PolySpaceSpec::new(r as usize, d as usize)?;
        let level = u32::try_from(level).map_err(|_| Error::Decode("level out of range".into()))?;
        if spec.rho as u64 != rho {
            return Err(Error::Decode(format!("rho = {rho} does not match r = {r}, d = {d}")));
        }
        let expected = level_count(level, spec.d)? * spec.rho;
        if entries.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: entries.len(),
            });
        }
        Ok(Self {
            level,
            d: spec.d,
            r: spec.r,
            rho: spec.rho,
            entries,
        })
    }
}

/// Normalized `l_q` norm `(L^-1 sum |v_i|^q)^(1/q)`; `q = inf` gives the max.
pub fn weighted_norm(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    if q.is_infinite() {
        return v.iter().fold(0.0, |m, x| m.max(x.abs()));
    }
    (v.iter().map(|x| x.abs().powf(q)).sum::<f64>() / v.len() as f64).powf(1.0 / q)
}

/// Coefficient vectors `nu_0, ..., nu_{n-r}` of one observation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleDecomposition {
    n: u32,
    spec: PolySpaceSpec,
    levels: Vec<CoefficientVector>,
}

impl MultiscaleDecomposition {
    pub fn from_levels(n: u32, spec: PolySpaceSpec, levels: Vec<CoefficientVector>) -> Result<Self> {
        let k_max = max_level(n, spec.r)?;
        if levels.len() != k_max as usize + 1 {
            return Err(Error::LengthMismatch {
                expected: k_max as usize + 1,
                found: levels.len(),
            });
        }
        for (k, nu) in levels.iter().enumerate() {
            let expected = level_count(k as u32, spec.d)? * spec.rho;
            if nu.level != k as u32 || nu.len() != expected || nu.rho != spec.rho {
                return Err(Error::LengthMismatch {
                    expected,
                    found: nu.len(),
                });
            }
        }
        Ok(Self { n, spec, levels })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn spec(&self) -> PolySpaceSpec {
        self.spec
    }

    pub fn k_max(&self) -> u32 {
        self.levels.len() as u32 - 1
    }

    pub fn level(&self, k: u32) -> &CoefficientVector {
        &self.levels[k as usize]
    }

    pub fn levels(&self) -> &[CoefficientVector] {
        &self.levels
    }

    pub fn into_levels(self) -> Vec<CoefficientVector> {
        self.levels
    }
}

fn max_level(n: u32, r: usize) -> Result<u32> {
    let k_max = n as i64 - r as i64;
    if k_max < 1 {
        return Err(Error::Precondition(format!(
            "need n >= r + 1, got n = {n}, r = {r}"
        )));
    }
    Ok(k_max as u32)
}

/// Offsets of a cube's sites relative to its first site, in local lex order.
fn site_offsets(per_axis: usize, stride_axis: usize, d: usize) -> Vec<usize> {
    let mut offsets = vec![0usize];
    for _ in 0..d {
        let mut next = Vec::with_capacity(offsets.len() * per_axis);
        for &o in &offsets {
            for l in 0..per_axis {
                next.push(o * stride_axis + l);
            }
        }
        offsets = next;
    }
    offsets
}

/// Level-`k` coefficients of the cellwise least-squares fits to `values`.
fn level_coefficients(values: &[f64], n: u32, d: usize, spec: PolySpaceSpec, k: u32) -> Result<Vec<f64>> {
    let per_axis = 1usize << (n - k);
    let basis = reference_basis(spec, per_axis)?;
    let grid_axis = 1usize << n;
    let offsets = site_offsets(per_axis, grid_axis, d);
    let rho = spec.rho;
    let weight = 1.0 / basis.site_count() as f64;
    let mut coeffs = vec![0.0; level_count(k, d)? * rho];
    coeffs.par_chunks_mut(rho).enumerate().for_each(|(lex, out)| {
        let cube = DyadicCube::from_lex(k, d, lex);
        let base = cube
            .idx
            .iter()
            .fold(0usize, |acc, &i| acc * grid_axis + i as usize * per_axis);
        for (off, q) in offsets.iter().zip(basis.site_values().chunks_exact(rho)) {
            let y = values[base + off];
            for (c, qj) in out.iter_mut().zip(q) {
                *c += y * qj;
            }
        }
        out.iter_mut().for_each(|c| *c *= weight);
    });
    Ok(coeffs)
}

/// `S_k` applied to the observations: cellwise least squares on level `k`.
pub fn project_level(obs: &ObservationSet, r: usize, k: u32) -> Result<PiecewisePoly> {
    let n = obs.grid.n();
    let max = n as i64 - r as i64;
    if k as i64 > max {
        return Err(Error::LevelTooDeep { k, max });
    }
    let spec = PolySpaceSpec::new(r, obs.grid.d())?;
    let coeffs = level_coefficients(&obs.values, n, obs.grid.d(), spec, k)?;
    PiecewisePoly::from_coeffs(k, spec, 1 << (n - k), coeffs)
}

type ExpansionKey = (usize, usize, usize);

/// For each orthant `o`, the `rho x rho` matrix taking a parent cube's
/// coefficients to the coefficients of the same polynomial in the child's
/// basis. Obtained by evaluating the parent basis at the child's sites and
/// projecting, which is exact on `P_r`.
fn expansion_matrices(spec: PolySpaceSpec, child_axis: usize) -> Result<Arc<Vec<Vec<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<ExpansionKey, Arc<Vec<Vec<f64>>>>>> = OnceLock::new();
    let key = (spec.r, spec.d, child_axis);
    if let Some(m) = CACHE.get_or_init(Default::default).lock().get(&key) {
        return Ok(m.clone());
    }
    let d = spec.d;
    let rho = spec.rho;
    let child = reference_basis(spec, child_axis)?;
    let parent = reference_basis(spec, 2 * child_axis)?;
    let offsets = site_offsets(child_axis, 2 * child_axis, d);
    let weight = 1.0 / child.site_count() as f64;
    let mut mats = Vec::with_capacity(1 << d);
    for o in 0..1usize << d {
        let base = (0..d).fold(0usize, |acc, j| {
            let bit = (o >> (d - 1 - j)) & 1;
            acc * 2 * child_axis + bit * child_axis
        });
        let mut m = vec![0.0; rho * rho];
        for (l, off) in offsets.iter().enumerate() {
            let qc = child.at_site(l);
            let qp = parent.at_site(base + off);
            for j in 0..rho {
                for i in 0..rho {
                    m[j * rho + i] += qc[j] * qp[i];
                }
            }
        }
        m.iter_mut().for_each(|v| *v *= weight);
        mats.push(m);
    }
    let mats = Arc::new(mats);
    CACHE
        .get_or_init(Default::default)
        .lock()
        .entry(key)
        .or_insert_with(|| mats.clone());
    Ok(mats)
}

/// Re-expands level `k - 1` coefficients on the level-`k` cubes.
fn refine(parent: &[f64], spec: PolySpaceSpec, k: u32, child_axis: usize) -> Result<Vec<f64>> {
    let mats = expansion_matrices(spec, child_axis)?;
    let rho = spec.rho;
    let d = spec.d;
    let mut out = vec![0.0; level_count(k, d)? * rho];
    out.par_chunks_mut(rho).enumerate().for_each(|(lex, slot)| {
        let cube = DyadicCube::from_lex(k, d, lex);
        let parent_lex = cube.parent().expect("k >= 1").lex_index();
        let pc = &parent[parent_lex * rho..(parent_lex + 1) * rho];
        let m = &mats[cube.orthant()];
        for (j, s) in slot.iter_mut().enumerate() {
            *s = m[j * rho..(j + 1) * rho].iter().zip(pc).map(|(a, b)| a * b).sum();
        }
    });
    Ok(out)
}

/// Multiscale coefficients `nu_k`, `k = 0..=n-r`, with `nu_0` the global fit
/// and `nu_k` the level-`k` expansion of `S_k - S_{k-1}`.
pub fn decompose(obs: &ObservationSet, r: usize) -> Result<MultiscaleDecomposition> {
    let n = obs.grid.n();
    let d = obs.grid.d();
    let spec = PolySpaceSpec::new(r, d)?;
    let k_max = max_level(n, r)?;
    let mut levels = Vec::with_capacity(k_max as usize + 1);
    let mut previous: Option<Vec<f64>> = None;
    for k in 0..=k_max {
        let current = level_coefficients(&obs.values, n, d, spec, k)?;
        let mut entries = current.clone();
        if let Some(prev) = &previous {
            let coarse = refine(prev, spec, k, 1 << (n - k))?;
            entries.iter_mut().zip(&coarse).for_each(|(e, c)| *e -= c);
        }
        levels.push(CoefficientVector {
            level: k,
            d,
            r,
            rho: spec.rho,
            entries,
        });
        previous = Some(current);
    }
    MultiscaleDecomposition::from_levels(n, spec, levels)
}

/// `S_{up_to} = sum_{k <= up_to} T_k`, as a piecewise polynomial on level `up_to`.
pub fn reconstruct(decomp: &MultiscaleDecomposition, up_to: u32) -> Result<PiecewisePoly> {
    if up_to > decomp.k_max() {
        return Err(Error::LevelTooDeep {
            k: up_to,
            max: decomp.k_max() as i64,
        });
    }
    let spec = decomp.spec;
    let n = decomp.n;
    let mut acc = decomp.level(0).entries.clone();
    for k in 1..=up_to {
        let mut next = refine(&acc, spec, k, 1 << (n - k))?;
        next.iter_mut()
            .zip(&decomp.level(k).entries)
            .for_each(|(a, b)| *a += b);
        acc = next;
    }
    PiecewisePoly::from_coeffs(up_to, spec, 1 << (n - up_to), acc)
}
