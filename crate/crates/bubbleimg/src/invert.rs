//! Imaging: imaging functional, resonance fits, density, internal field and
//! bulk modulus maps.

use crate::dataio::{record_rms, MeasurementSet, Meta};
use crate::error::{Error, Result};
use crate::media::{Grid3, MinnaertConstant, Regime, ScanGrid};
use crate::numerics::vec3::dot;
use crate::{Vec3, C64};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;

pub const RECON_VERSION: u32 = 1;

/// Pole model of the imaging functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `c/(ω² − ω_r²)`
    Regime1,
    /// `c ω²/(ω² − ω_r²)`
    Regime2,
}

impl FitModel {
    pub fn from_regime(r: Regime) -> FitModel {
        match r {
            Regime::Minnaert => FitModel::Regime1,
            Regime::BodyWave => FitModel::Regime2,
        }
    }
}

impl std::str::FromStr for FitModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "regime1" => Ok(FitModel::Regime1),
            "2" | "regime2" => Ok(FitModel::Regime2),
            _ => Err(Error::Domain(format!("unknown regime {s:?}"))),
        }
    }
}

/// How `v²` is read off the residue function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extraction {
    /// The sample nearest `ω_eval`.
    #[default]
    Single,
    /// Weighted cubic fit over the band, evaluated at `ω_eval`.
    Smoothed,
}

impl std::str::FromStr for Extraction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Extraction::Single),
            "smoothed" => Ok(Extraction::Smoothed),
            _ => Err(Error::Domain(format!("unknown extraction {s:?}"))),
        }
    }
}

/// `I(ω, z)` over the band at one scan point.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub z: Vec3,
    pub omegas: Vec<f64>,
    pub values: Vec<C64>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    /// Multiply by `e^{−2iκ̄₀(ω)θ·z}`, removing the incident phase of `v²`.
    pub fn demodulated(&self, meta: &Meta) -> Series {
        let tz = dot(meta.theta, self.z);
        Series {
            z: self.z,
            omegas: self.omegas.clone(),
            values: self
                .omegas
                .iter()
                .zip(&self.values)
                .map(|(&w, v)| v * C64::from_polar(1.0, -2.0 * meta.exterior_kappa(w) * tz))
                .collect(),
        }
    }
}

/// `I(ω, z) = u^∞(−θ, θ, ω, z) − v^∞(−θ, θ, ω)`.
pub fn imaging_functional(set: &MeasurementSet, z: Vec3) -> Result<Series> {
    let key = z.map(f64::to_bits);
    let mut rows: Vec<(f64, C64)> = set
        .bubbled
        .iter()
        .filter(|r| r.z.map(f64::to_bits) == key)
        .map(|r| (r.omega, r.u))
        .collect();
    if rows.is_empty() {
        return Err(Error::Data(format!("scan point {z:?} is not in the data")));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    let skipped: Vec<f64> = set
        .meta
        .skipped
        .iter()
        .filter(|s| s.z.map(f64::to_bits) == key)
        .map(|s| s.omega)
        .collect();
    let gaps: Vec<f64> = set
        .meta
        .band
        .omegas()
        .into_iter()
        .filter(|w| !rows.iter().any(|r| close(r.0, *w)) && !skipped.iter().any(|s| close(*s, *w)))
        .collect();
    if !gaps.is_empty() {
        return Err(Error::Data(format!("scan point {z:?} is missing frequencies {gaps:?}")));
    }

    let mut omegas = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for (w, u) in rows {
        let v = set
            .baseline_at(w)
            .ok_or_else(|| Error::Data(format!("no baseline record at ω = {w}")))?;
        omegas.push(w);
        values.push(u - v);
    }
    Ok(Series { z, omegas, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Samples with `|I|` at or above this quantile enter the regression.
    pub fraction: f64,
    pub prominence: f64,
    pub min_samples: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            fraction: 0.5,
            prominence: 10.0,
            min_samples: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceFit {
    pub omega_r2: f64,
    pub residue: C64,
    pub model: FitModel,
    /// One minus the relative regression residual; 0 for the argmax fallback.
    pub goodness: f64,
    pub fallback: bool,
    pub samples: usize,
}

impl ResonanceFit {
    pub fn omega_r(&self) -> f64 {
        self.omega_r2.sqrt()
    }

    pub fn eval(&self, omega: f64) -> C64 {
        let w2 = omega * omega;
        let c = match self.model {
            FitModel::Regime1 => self.residue,
            FitModel::Regime2 => self.residue * w2,
        };
        c / (w2 - self.omega_r2)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

pub fn fit_resonance(series: &Series, model: FitModel) -> Result<ResonanceFit> {
    fit_resonance_with(series, model, &FitOptions::default())
}

/// Regression of `1/g` on `ω²` with `g = I` (regime 1) or `I/ω²` (regime 2),
/// weighted by `|g|²`: minimise `Σ|1 − g(pω² + q)|²`.
pub fn fit_resonance_with(series: &Series, model: FitModel, opts: &FitOptions) -> Result<ResonanceFit> {
    let n = series.len();
    if n < opts.min_samples {
        return Err(Error::Precondition(format!(
            "resonance fit needs at least {} samples, got {n}",
            opts.min_samples
        )));
    }
    let mags: Vec<f64> = series.values.iter().map(|v| v.norm()).collect();
    if mags.iter().any(|m| !m.is_finite()) {
        return Err(Error::Data("non-finite imaging functional".into()));
    }
    let (imax, max) = mags
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |(bi, bm), (i, &m)| if m > bm { (i, m) } else { (bi, bm) });
    let med = median(&mut mags.clone());
    if !(max > opts.prominence * med) {
        return Err(Error::NoResonance(format!(
            "peak {max:.3e} is not {}× the median {med:.3e}",
            opts.prominence
        )));
    }

    let cut = quantile(&mags, opts.fraction);
    let scale = series.omegas.iter().map(|w| w * w).sum::<f64>() / n as f64;
    let rows: Vec<(f64, C64)> = (0..n)
        .filter(|&i| mags[i] >= cut)
        .map(|i| {
            let w2 = series.omegas[i] * series.omegas[i];
            let g = match model {
                FitModel::Regime1 => series.values[i],
                FitModel::Regime2 => series.values[i] / w2,
            };
            (w2 / scale, g)
        })
        .collect();

    let fallback = || {
        let w = series.omegas[imax];
        ResonanceFit {
            omega_r2: w * w,
            residue: C64::new(0.0, 0.0),
            model,
            goodness: 0.0,
            fallback: true,
            samples: rows.len(),
        }
    };
    if rows.len() < 3 {
        return Ok(fallback());
    }

    // Normal equations for the columns [x g, g] against the ones vector.
    let (mut a11, mut a12, mut a22) = (0.0, C64::new(0.0, 0.0), 0.0);
    let (mut b1, mut b2) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
    for &(x, g) in &rows {
        let c1 = g * x;
        a11 += c1.norm_sqr();
        a12 += c1.conj() * g;
        a22 += g.norm_sqr();
        b1 += c1.conj();
        b2 += g.conj();
    }
    let det = a11 * a22 - a12.norm_sqr();
    if !(det > 1e-12 * a11 * a22) {
        return Ok(fallback());
    }
    let p = (b1 * a22 - a12 * b2) / det;
    let q = (b2 * a11 - a12.conj() * b1) / det;
    if p.norm() == 0.0 {
        return Ok(fallback());
    }
    let omega_r2 = scale * (-q / p).re;
    let (lo, hi) = (series.omegas[0], series.omegas[n - 1]);
    if !omega_r2.is_finite() || !(omega_r2 >= lo * lo && omega_r2 <= hi * hi) {
        return Ok(fallback());
    }
    let resid = (rows.iter().map(|&(x, g)| (C64::new(1.0, 0.0) - g * (p * x + q)).norm_sqr()).sum::<f64>() / rows.len() as f64).sqrt();
    Ok(ResonanceFit {
        omega_r2,
        residue: scale / p,
        model,
        goodness: (1.0 - resid).clamp(0.0, 1.0),
        fallback: false,
        samples: rows.len(),
    })
}

/// `ρ₀(z) = C k̄₁/(ω_r² μ_∂B)` with `C = 8π` by default.
pub fn recover_density(fit: &ResonanceFit, k_bar: f64, mu_shape: f64, constant: MinnaertConstant) -> Result<f64> {
    if fit.model != FitModel::Regime1 {
        return Err(Error::Precondition("density recovery needs a Minnaert-regime fit".into()));
    }
    if !(fit.omega_r2 > 0.0) {
        return Err(Error::Fit(format!("non-positive ω_r² = {}", fit.omega_r2)));
    }
    Ok(constant.value() * k_bar / (fit.omega_r2 * mu_shape))
}

/// `I = −C(ω)·v²`: the bubble coefficient of the far-field model without `v²`.
fn bubble_coefficient(meta: &Meta, model: FitModel, omega_r2: f64, omega: f64) -> Result<f64> {
    let base = meta.eps * meta.exterior_rho / (4.0 * PI * meta.k_bar);
    match model {
        FitModel::Regime1 => Ok(omega_r2 * meta.volume * base),
        FitModel::Regime2 => {
            let m2 = meta
                .moment_sq
                .ok_or_else(|| Error::Data("the sidecar carries no cluster moment".into()))?;
            Ok(omega * omega * omega_r2 * m2 * base)
        }
    }
}

/// `v²(ω)` at every sample from the fitted pole.
pub fn field_squared(series: &Series, fit: &ResonanceFit, meta: &Meta) -> Result<Vec<C64>> {
    series
        .omegas
        .iter()
        .zip(&series.values)
        .map(|(&w, i)| {
            let c = bubble_coefficient(meta, fit.model, fit.omega_r2, w)?;
            Ok(-i * (w * w - fit.omega_r2) / c)
        })
        .collect()
}

/// `v²(z, ω_eval)` by the chosen extraction.
pub fn extract_field_squared(series: &Series, fit: &ResonanceFit, meta: &Meta, omega_eval: f64, how: Extraction) -> Result<C64> {
    let r = field_squared(series, fit, meta)?;
    let tz = dot(meta.theta, series.z);
    let phase = |w: f64| C64::from_polar(1.0, 2.0 * meta.exterior_kappa(w) * tz);
    match how {
        Extraction::Single => {
            let j = (0..series.len())
                .min_by(|&a, &b| (series.omegas[a] - omega_eval).abs().total_cmp(&(series.omegas[b] - omega_eval).abs()))
                .ok_or_else(|| Error::Data("empty series".into()))?;
            if series.omegas[j] == omega_eval {
                Ok(r[j])
            } else {
                Ok(r[j] / phase(series.omegas[j]) * phase(omega_eval))
            }
        }
        Extraction::Smoothed => {
            let n = series.len();
            if n < 5 {
                return Err(Error::Precondition("smoothed extraction needs at least 5 samples".into()));
            }
            let (lo, hi) = (series.omegas[0], series.omegas[n - 1]);
            let mid = 0.5 * (lo + hi);
            let deg = 3;
            let mut a = DMatrix::<C64>::zeros(n, deg + 1);
            let mut b = DVector::<C64>::zeros(n);
            for i in 0..n {
                let w = series.omegas[i];
                let wt = 1.0 / (w * w - fit.omega_r2).abs().max(1e-300);
                let t = (w - mid) / mid;
                for k in 0..=deg {
                    a[(i, k)] = C64::new(wt * t.powi(k as i32), 0.0);
                }
                b[i] = r[i] / phase(w) * wt;
            }
            let coef = a
                .svd(true, true)
                .solve(&b, 1e-14)
                .map_err(|e| Error::Numerical(e.to_string()))?;
            let t = (omega_eval - mid) / mid;
            let val: C64 = (0..=deg).map(|k| coef[k] * t.powi(k as i32)).sum();
            Ok(val * phase(omega_eval))
        }
    }
}

const NEIGHBOURS: [[isize; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

fn neighbour(g: &Grid3, idx: usize, d: [isize; 3]) -> Option<usize> {
    let ijk = g.ijk(idx);
    let mut out = [0usize; 3];
    for a in 0..3 {
        let v = ijk[a] as isize + d[a];
        if v < 0 || v >= g.dims[a] as isize {
            return None;
        }
        out[a] = v as usize;
    }
    Some(g.index(out[0], out[1], out[2]))
}

fn is_boundary(g: &Grid3, idx: usize) -> bool {
    let ijk = g.ijk(idx);
    (0..3).any(|a| ijk[a] == 0 || ijk[a] + 1 == g.dims[a])
}

/// Principal square roots, with signs made consistent over each connected
/// component of the unmasked lattice. Each component's sign is anchored so its
/// largest value has non-negative real part.
pub fn sign_unwrap(grid: &Grid3, v2: &[Option<C64>]) -> Vec<Option<C64>> {
    let mut v: Vec<Option<C64>> = v2.iter().map(|x| x.map(|x| x.sqrt())).collect();
    let mut comp = vec![usize::MAX; v.len()];
    let mut ncomp = 0;
    for start in 0..v.len() {
        if v[start].is_none() || comp[start] != usize::MAX {
            continue;
        }
        // Collect the component.
        let mut members = vec![start];
        comp[start] = ncomp;
        let mut k = 0;
        while k < members.len() {
            let i = members[k];
            k += 1;
            for d in NEIGHBOURS {
                if let Some(j) = neighbour(grid, i, d) {
                    if v[j].is_some() && comp[j] == usize::MAX {
                        comp[j] = ncomp;
                        members.push(j);
                    }
                }
            }
        }
        // Breadth-first sign propagation from the largest value.
        let seed = *members
            .iter()
            .max_by(|&&a, &&b| v[a].unwrap().norm().total_cmp(&v[b].unwrap().norm()))
            .unwrap();
        if v[seed].unwrap().re < 0.0 {
            v[seed] = v[seed].map(|x| -x);
        }
        let mut done = vec![false; v.len()];
        let mut queue = VecDeque::from([seed]);
        done[seed] = true;
        while let Some(i) = queue.pop_front() {
            let vi = v[i].unwrap();
            for d in NEIGHBOURS {
                if let Some(j) = neighbour(grid, i, d) {
                    if comp[j] != ncomp {
                        continue;
                    }
                    if done[j] {
                        continue;
                    }
                    let vj = v[j].unwrap();
                    if (vi - vj).norm() > (vi + vj).norm() {
                        v[j] = Some(-vj);
                    }
                    done[j] = true;
                    queue.push_back(j);
                }
            }
        }
        ncomp += 1;
    }
    v
}

/// Connected components of the unmasked lattice, labelled in index order.
pub fn components(grid: &Grid3, mask: &[bool]) -> Vec<Option<usize>> {
    let mut label = vec![None; mask.len()];
    let mut n = 0;
    for s in 0..mask.len() {
        if !mask[s] || label[s].is_some() {
            continue;
        }
        let mut queue = VecDeque::from([s]);
        label[s] = Some(n);
        while let Some(i) = queue.pop_front() {
            for d in NEIGHBOURS {
                if let Some(j) = neighbour(grid, i, d) {
                    if mask[j] && label[j].is_none() {
                        label[j] = Some(n);
                        queue.push_back(j);
                    }
                }
            }
        }
        n += 1;
    }
    label
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkMap {
    pub k0: Vec<Option<f64>>,
    pub mask: Vec<bool>,
    /// Largest `|Im k₀|/|Re k₀|` over the unmasked nodes.
    pub max_imag_ratio: f64,
}

/// Defaults for the map stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    /// Nodes with `|v|` below this fraction of the maximum are masked.
    pub mask_fraction: f64,
    /// Relative floor on `|∇·(ρ₀⁻¹∇v)|`.
    pub denominator_tol: f64,
    /// Multiples of the estimated noise level below which `v²` is masked.
    pub noise_sigmas: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            mask_fraction: 0.1,
            denominator_tol: 1e-8,
            noise_sigmas: 3.0,
        }
    }
}

/// `∇·(ρ₀⁻¹∇v)` at an interior node: 7-point Laplacian plus centred
/// `∇ρ₀⁻¹·∇v`.
fn divergence_term(grid: &Grid3, v: &[Option<C64>], inv_rho: &[Option<f64>], i: usize) -> Option<C64> {
    let h2 = grid.h * grid.h;
    let vi = v[i]?;
    let ai = inv_rho[i]?;
    let mut lap = -6.0 * vi;
    let mut cross = C64::new(0.0, 0.0);
    for axis in 0..3 {
        let mut dp = [0isize; 3];
        dp[axis] = 1;
        let mut dm = [0isize; 3];
        dm[axis] = -1;
        let p = neighbour(grid, i, dp)?;
        let m = neighbour(grid, i, dm)?;
        let (vp, vm) = (v[p]?, v[m]?);
        let (ap, am) = (inv_rho[p]?, inv_rho[m]?);
        lap += vp + vm;
        cross += (vp - vm) * (ap - am);
    }
    Some(lap * ai / h2 + cross / (4.0 * h2))
}

/// `k₀ = −ω² v / ∇·(ρ₀⁻¹∇v)` on the unmasked interior.
pub fn recover_bulk(grid: &Grid3, v: &[Option<C64>], rho0: &[Option<f64>], omega: f64, opts: &MapOptions) -> Result<BulkMap> {
    if v.len() != grid.len() || rho0.len() != grid.len() {
        return Err(Error::Precondition("v and ρ₀ maps must live on the grid".into()));
    }
    let inv: Vec<Option<f64>> = rho0.iter().map(|r| r.filter(|r| *r > 0.0).map(|r| 1.0 / r)).collect();
    let vmax = v.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max);
    let den: Vec<Option<C64>> = (0..grid.len())
        .map(|i| if is_boundary(grid, i) { None } else { divergence_term(grid, v, &inv, i) })
        .collect();
    let dmax = den.iter().flatten().map(|x| x.norm()).fold(0.0, f64::max);
    let mut k0 = vec![None; grid.len()];
    let mut mask = vec![false; grid.len()];
    let mut imag = 0.0f64;
    for i in 0..grid.len() {
        let (Some(vi), Some(d)) = (v[i], den[i]) else { continue };
        if vi.norm() <= opts.mask_fraction * vmax || d.norm() <= opts.denominator_tol * dmax {
            continue;
        }
        let k = -omega * omega * vi / d;
        if !(k.re.is_finite() && k.re > 0.0) {
            continue;
        }
        imag = imag.max(k.im.abs() / k.re);
        k0[i] = Some(k.re);
        mask[i] = true;
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Degenerate("every node of the bulk-modulus map is masked".into()));
    }
    Ok(BulkMap {
        k0,
        mask,
        max_imag_ratio: imag,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointOptions {
    /// Tikhonov weight on the neighbour differences of the unknown maps.
    pub tau: f64,
    /// Prescribed mean of `ρ₀⁻¹`, fixing the scale of the homogeneous system.
    pub inv_rho_mean: f64,
    /// Scale of `k₀⁻¹` used to balance the unknowns.
    pub inv_k_scale: f64,
    /// Known nodal `ρ₀⁻¹`; only `k₀⁻¹` is then solved for.
    pub known_inv_rho: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMaps {
    /// `ρ₀⁻¹` on the nodes entering the stencils.
    pub inv_rho: Vec<Option<f64>>,
    /// `k₀⁻¹` on the interior nodes.
    pub inv_k: Vec<Option<f64>>,
    /// Relative residual of the unregularised equations.
    pub residual: f64,
    /// Smallest over largest singular value of the unregularised system.
    pub rcond: f64,
}

/// Dense-system cap for the joint solve.
pub const JOINT_CAP: usize = 6000;

/// Solve `∇·(a∇v_j) + ω_j² b v_j = 0` for nodal `a = ρ₀⁻¹`, `b = k₀⁻¹`,
/// with face values `(a_i + a_j)/2`. Every field must be defined on all nodes.
pub fn joint_coefficients(grid: &Grid3, fields: &[(f64, Vec<C64>)], opts: &JointOptions) -> Result<JointMaps> {
    let known = opts.known_inv_rho.as_deref();
    if known.is_none() && fields.len() < 2 {
        return Err(Error::Precondition("joint recovery needs at least two frequencies".into()));
    }
    if fields.is_empty() || fields.iter().any(|(_, v)| v.len() != grid.len()) || known.is_some_and(|a| a.len() != grid.len()) {
        return Err(Error::Precondition("every map must live on the grid".into()));
    }
    let interior: Vec<usize> = (0..grid.len()).filter(|&i| !is_boundary(grid, i)).collect();
    if interior.is_empty() {
        return Err(Error::Precondition("grid has no interior nodes".into()));
    }
    // Unknowns: a on interior nodes and their face neighbours, b on interior nodes.
    let mut a_col = vec![usize::MAX; grid.len()];
    let mut na = 0;
    if known.is_none() {
        for i in 0..grid.len() {
            let used = !is_boundary(grid, i) || NEIGHBOURS.iter().any(|&d| neighbour(grid, i, d).is_some_and(|j| !is_boundary(grid, j)));
            if used {
                a_col[i] = na;
                na += 1;
            }
        }
    }
    let mut b_col = vec![usize::MAX; grid.len()];
    for (k, &i) in interior.iter().enumerate() {
        b_col[i] = na + k;
    }
    let nu = na + interior.len();
    let rows_pde = 2 * fields.len() * interior.len();
    if nu > JOINT_CAP || rows_pde > 4 * JOINT_CAP {
        return Err(Error::MemoryGuard { count: nu, cap: JOINT_CAP });
    }
    let (sa, sb) = (opts.inv_rho_mean, opts.inv_k_scale);
    let h2 = grid.h * grid.h;
    // Scale row, plus a gauge row: the face average cancels the checkerboard
    // mode of a exactly, so its component is pinned to zero.
    let extra = 2 * usize::from(known.is_none());

    let mut m = DMatrix::<f64>::zeros(rows_pde + extra, nu);
    let mut rhs = DVector::<f64>::zeros(rows_pde + extra);
    let mut row = 0;
    for (omega, v) in fields {
        let vmax = v.iter().map(|x| x.norm()).fold(0.0, f64::max);
        if !(vmax > 0.0) {
            return Err(Error::Degenerate("zero field".into()));
        }
        let norm = h2 / (sa * vmax);
        for &i in &interior {
            let mut known_part = C64::new(0.0, 0.0);
            let mut coef: Vec<(usize, C64)> = Vec::with_capacity(13);
            for d in NEIGHBOURS {
                let j = neighbour(grid, i, d).expect("interior node");
                let flux = (v[j] - v[i]) * (0.5 / h2);
                match known {
                    Some(a) => known_part += flux * (a[i] + a[j]),
                    None => {
                        coef.push((a_col[i], flux * sa));
                        coef.push((a_col[j], flux * sa));
                    }
                }
            }
            coef.push((b_col[i], v[i] * (omega * omega * sb)));
            for (c, val) in coef {
                m[(row, c)] += val.re * norm;
                m[(row + 1, c)] += val.im * norm;
            }
            rhs[row] = -known_part.re * norm;
            rhs[row + 1] = -known_part.im * norm;
            row += 2;
        }
    }
    if known.is_none() {
        for i in 0..grid.len() {
            if a_col[i] != usize::MAX {
                let [x, y, z] = grid.ijk(i);
                let parity = if (x + y + z) % 2 == 0 { 1.0 } else { -1.0 };
                m[(rows_pde, a_col[i])] = 1.0 / na as f64;
                m[(rows_pde + 1, a_col[i])] = parity / na as f64;
            }
        }
        rhs[rows_pde] = 1.0;
    }

    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let rcond = if smax > 0.0 { sv.min() / smax } else { 0.0 };
    if !(rcond > 1e-10) {
        return Err(Error::Identifiability(format!("joint system is rank deficient (rcond {rcond:.3e})")));
    }

    let mut pairs = Vec::new();
    if opts.tau > 0.0 {
        for i in 0..grid.len() {
            for d in [[1, 0, 0], [0, 1, 0], [0, 0, 1]] {
                if let Some(j) = neighbour(grid, i, d) {
                    if a_col[i] != usize::MAX && a_col[j] != usize::MAX {
                        pairs.push((a_col[i], a_col[j]));
                    }
                    if b_col[i] != usize::MAX && b_col[j] != usize::MAX {
                        pairs.push((b_col[i], b_col[j]));
                    }
                }
            }
        }
    }
    let nr = m.nrows();
    let mut r = DMatrix::<f64>::zeros(nr + pairs.len(), nu);
    r.view_mut((0, 0), (nr, nu)).copy_from(&m);
    let mut rr = DVector::<f64>::zeros(nr + pairs.len());
    rr.rows_mut(0, nr).copy_from(&rhs);
    for (k, &(p, q)) in pairs.iter().enumerate() {
        r[(nr + k, p)] = opts.tau;
        r[(nr + k, q)] = -opts.tau;
    }
    let sol = r.svd(true, true).solve(&rr, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;

    let pde = m.rows(0, rows_pde);
    let res = (pde * &sol - rhs.rows(0, rows_pde)).norm();
    let size = (pde.abs() * sol.abs() + rhs.rows(0, rows_pde).abs()).norm().max(1e-300);
    let inv_rho = match known {
        Some(a) => a.iter().map(|x| Some(*x)).collect(),
        None => (0..grid.len()).map(|i| (a_col[i] != usize::MAX).then(|| sol[a_col[i]] * sa)).collect(),
    };
    let inv_k = (0..grid.len()).map(|i| (b_col[i] != usize::MAX).then(|| sol[b_col[i]] * sb)).collect();
    Ok(JointMaps {
        inv_rho,
        inv_k,
        residual: res / size,
        rcond,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetric {
    /// `max |r − t|/|t|`.
    pub linf: f64,
    /// `‖r − t‖₂/‖t‖₂`.
    pub l2: f64,
    pub count: usize,
}

/// Relative errors over the nodes where the reconstruction is defined.
pub fn error_metric(recon: &[Option<f64>], truth: &[f64]) -> ErrorMetric {
    let (mut linf, mut num, mut den, mut count) = (0.0f64, 0.0, 0.0, 0);
    for (r, t) in recon.iter().zip(truth) {
        if let Some(r) = r {
            linf = linf.max((r - t).abs() / t.abs());
            num += (r - t).powi(2);
            den += t * t;
            count += 1;
        }
    }
    ErrorMetric {
        linf,
        l2: if den > 0.0 { (num / den).sqrt() } else { 0.0 },
        count,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rho0: Option<ErrorMetric>,
    pub k0: Option<ErrorMetric>,
    pub v_abs: Option<ErrorMetric>,
}

/// Truth on the scan lattice; `None` entries are not compared.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Truth {
    pub rho0: Option<Vec<f64>>,
    pub k0: Option<Vec<f64>>,
    pub v_abs: Option<Vec<f64>>,
}

pub fn error_metrics(recon: &ReconstructionResult, truth: &Truth) -> ErrorReport {
    let vabs: Vec<Option<f64>> = recon.v.iter().map(|v| v.map(|[re, im]| re.hypot(im))).collect();
    ErrorReport {
        rho0: truth.rho0.as_ref().map(|t| error_metric(&recon.rho0, t)),
        k0: truth.k0.as_ref().map(|t| error_metric(&recon.k0, t)),
        v_abs: truth.v_abs.as_ref().map(|t| error_metric(&vabs, t)),
    }
}

/// Every threshold of the inversion, overridable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvertOptions {
    pub regime: Option<FitModel>,
    /// Default: the band endpoint farthest from the median fitted `ω_r`.
    pub omega_eval: Option<f64>,
    pub extraction: Extraction,
    pub minnaert_constant: MinnaertConstant,
    pub tau: f64,
    /// Divide `I` by the incident phase before fitting.
    pub demodulate: bool,
    pub fit: FitOptions,
    pub maps: MapOptions,
}

impl Default for InvertOptions {
    fn default() -> Self {
        InvertOptions {
            regime: None,
            omega_eval: None,
            extraction: Extraction::Single,
            minnaert_constant: MinnaertConstant::EightPi,
            tau: 1e-6,
            demodulate: true,
            fit: FitOptions::default(),
            maps: MapOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFit {
    pub z: Vec3,
    pub omega_r2: Option<f64>,
    pub residue: Option<[f64; 2]>,
    pub goodness: f64,
    pub fallback: bool,
    pub samples: usize,
    pub error: Option<String>,
}

/// Maps are indexed like the scan lattice; `null` marks masked nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub version: u32,
    pub scenario_hash: String,
    pub farfield_normalization: String,
    pub regime: FitModel,
    pub omega_eval: f64,
    pub options: InvertOptions,
    pub grid: ScanGrid,
    pub fits: Vec<PointFit>,
    pub omega_r2: Vec<Option<f64>>,
    pub rho0: Vec<Option<f64>>,
    pub v: Vec<Option<[f64; 2]>>,
    pub v_mask: Vec<bool>,
    pub k0: Vec<Option<f64>>,
    pub k0_mask: Vec<bool>,
    /// `ρ₀⁻¹`, `k₀⁻¹` from the multi-frequency pathway (regime 2).
    pub joint: Option<JointMaps>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub fitted: usize,
    pub fallbacks: usize,
    pub failed: usize,
    pub components: usize,
    pub k0_max_imag_ratio: Option<f64>,
    pub noise_floor: f64,
    pub warnings: Vec<String>,
}

impl ReconstructionResult {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(format!("cannot serialise reconstruction: {e}")))
    }
}

fn farthest_endpoint(band: (f64, f64), omega_r: f64) -> f64 {
    if (band.1 - omega_r).abs() >= (omega_r - band.0).abs() {
        band.1
    } else {
        band.0
    }
}

/// Full inversion of a measurement set on its scan lattice.
pub fn invert(set: &MeasurementSet, opts: &InvertOptions) -> Result<ReconstructionResult> {
    set.validate()?;
    let meta = &set.meta;
    let model = opts.regime.unwrap_or_else(|| FitModel::from_regime(meta.regime));
    let grid = meta.scan.lattice();
    let tol = 1e-9 * grid.h;
    let mut warnings = Vec::new();

    let mut slot: Vec<Option<Vec3>> = vec![None; grid.len()];
    for z in set.points() {
        let i = grid
            .node_index_of(z, tol)
            .ok_or_else(|| Error::Data(format!("scan point {z:?} is not on the scan lattice")))?;
        slot[i] = Some(z);
    }

    let per: Vec<Option<(Series, Result<ResonanceFit>)>> = slot
        .par_iter()
        .map(|z| -> Result<Option<(Series, Result<ResonanceFit>)>> {
            let Some(z) = z else { return Ok(None) };
            let series = imaging_functional(set, *z)?;
            let target = if opts.demodulate { series.demodulated(meta) } else { series.clone() };
            let fit = fit_resonance_with(&target, model, &opts.fit);
            Ok(Some((series, fit)))
        })
        .collect::<Result<_>>()?;

    let mut fits = Vec::with_capacity(grid.len());
    let mut omega_r2 = vec![None; grid.len()];
    let (mut fitted, mut fallbacks, mut failed) = (0, 0, 0);
    for (i, p) in per.iter().enumerate() {
        let Some((series, fit)) = p else { continue };
        match fit {
            Ok(f) => {
                fitted += 1;
                if f.fallback {
                    fallbacks += 1;
                } else {
                    omega_r2[i] = Some(f.omega_r2);
                }
                fits.push(PointFit {
                    z: series.z,
                    omega_r2: Some(f.omega_r2),
                    residue: Some([f.residue.re, f.residue.im]),
                    goodness: f.goodness,
                    fallback: f.fallback,
                    samples: f.samples,
                    error: None,
                });
            }
            Err(e) => {
                failed += 1;
                fits.push(PointFit {
                    z: series.z,
                    omega_r2: None,
                    residue: None,
                    goodness: 0.0,
                    fallback: false,
                    samples: 0,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    if fitted == 0 {
        let first = fits.iter().find_map(|f| f.error.clone()).unwrap_or_default();
        return Err(Error::NoResonance(format!("no scan point yields a resonance fit: {first}")));
    }
    if failed > 0 {
        warnings.push(format!("{failed} scan points have no resonance fit"));
    }
    if fallbacks > 0 {
        warnings.push(format!("{fallbacks} scan points fell back to the peak sample"));
    }

    let rho0: Vec<Option<f64>> = match model {
        FitModel::Regime1 => per
            .iter()
            .map(|p| match p {
                Some((_, Ok(f))) if !f.fallback => recover_density(f, meta.k_bar, meta.mu_shape, opts.minnaert_constant).ok(),
                _ => None,
            })
            .collect(),
        FitModel::Regime2 => vec![None; grid.len()],
    };

    let band = (meta.band.omega_min, meta.band.omega_max);
    let omega_eval = match opts.omega_eval {
        Some(w) => w,
        None => {
            let mut rs: Vec<f64> = omega_r2.iter().flatten().map(|w| w.sqrt()).collect();
            if rs.is_empty() {
                band.1
            } else {
                farthest_endpoint(band, median(&mut rs))
            }
        }
    };

    // Noise level of a single I sample, from the sidecar.
    let sigma_i = meta.noise.delta * record_rms(set) * 2f64.sqrt();
    let extract = |w: f64| -> Vec<Option<(C64, f64)>> {
        per.par_iter()
            .map(|p| {
                let (series, fit) = p.as_ref()?;
                let fit = fit.as_ref().ok().filter(|f| !f.fallback)?;
                let v2 = extract_field_squared(series, fit, meta, w, opts.extraction).ok()?;
                let c = bubble_coefficient(meta, model, fit.omega_r2, w).ok()?;
                let floor = sigma_i * (w * w - fit.omega_r2).abs() / c.abs();
                Some((v2, floor))
            })
            .collect()
    };
    let mask_field = |raw: &[Option<(C64, f64)>]| -> (Vec<Option<C64>>, f64) {
        let mut v2: Vec<Option<C64>> = raw
            .iter()
            .map(|x| x.and_then(|(v2, floor)| (v2.is_finite() && v2.norm() > opts.maps.noise_sigmas * floor).then_some(v2)))
            .collect();
        let vmax = v2.iter().flatten().map(|x| x.norm().sqrt()).fold(0.0, f64::max);
        for x in v2.iter_mut() {
            if x.is_some_and(|x| x.norm().sqrt() <= opts.maps.mask_fraction * vmax) {
                *x = None;
            }
        }
        let floor = raw.iter().flatten().map(|x| x.1).fold(0.0, f64::max);
        (v2, floor)
    };

    let raw = extract(omega_eval);
    let (v2, noise_floor) = mask_field(&raw);
    let v = sign_unwrap(&grid, &v2);
    let v_mask: Vec<bool> = v.iter().map(|x| x.is_some()).collect();
    let ncomp = components(&grid, &v_mask).iter().flatten().max().map_or(0, |m| m + 1);
    if ncomp > 1 {
        warnings.push(format!("the field map splits into {ncomp} components with independent signs"));
    }

    let (k0, k0_mask, imag, joint) = match model {
        FitModel::Regime1 => match recover_bulk(&grid, &v, &rho0, omega_eval, &opts.maps) {
            Ok(b) => (b.k0, b.mask, Some(b.max_imag_ratio), None),
            Err(e) => {
                warnings.push(format!("bulk modulus: {e}"));
                (vec![None; grid.len()], vec![false; grid.len()], None, None)
            }
        },
        FitModel::Regime2 => {
            let mut fields = Vec::new();
            for w in [band.0, band.1] {
                let (vf, _) = mask_field(&extract(w));
                let vf = sign_unwrap(&grid, &vf);
                if vf.iter().all(|x| x.is_some()) {
                    fields.push((w, vf.into_iter().map(|x| x.unwrap()).collect::<Vec<_>>()));
                }
            }
            let joint = if fields.len() >= 2 {
                let jo = JointOptions {
                    tau: opts.tau,
                    inv_rho_mean: 1.0 / meta.exterior_rho,
                    inv_k_scale: 1.0 / meta.exterior_k,
                    known_inv_rho: None,
                };
                match joint_coefficients(&grid, &fields, &jo) {
                    Ok(j) => {
                        // Both fields share θ: a ρ₀⁻¹ that only varies across θ is nearly free.
                        warnings.push(format!(
                            "joint maps from a single incident direction are weakly determined (rcond {:.1e})",
                            j.rcond
                        ));
                        Some(j)
                    }
                    Err(e) => {
                        warnings.push(format!("joint coefficients: {e}"));
                        None
                    }
                }
            } else {
                warnings.push("joint coefficients need unmasked fields on the whole lattice at both band edges".into());
                None
            };
            (vec![None; grid.len()], vec![false; grid.len()], None, joint)
        }
    };

    Ok(ReconstructionResult {
        version: RECON_VERSION,
        scenario_hash: meta.scenario_hash.clone(),
        farfield_normalization: meta.farfield_normalization.clone(),
        regime: model,
        omega_eval,
        options: InvertOptions {
            regime: Some(model),
            omega_eval: Some(omega_eval),
            ..*opts
        },
        grid: meta.scan.clone(),
        fits,
        omega_r2,
        rho0,
        v: v.iter().map(|x| x.map(|x| [x.re, x.im])).collect(),
        v_mask,
        k0,
        k0_mask,
        joint,
        diagnostics: Diagnostics {
            fitted,
            fallbacks,
            failed,
            components: ncomp,
            k0_max_imag_ratio: imag,
            noise_floor,
            warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(f: impl Fn(f64) -> C64, lo: f64, hi: f64, n: usize) -> Series {
        let omegas: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        Series {
            z: [0.0; 3],
            values: omegas.iter().map(|&w| f(w)).collect(),
            omegas,
        }
    }

    #[test]
    fn exact_pole_is_recovered() {
        let s = series(|w| C64::new(1.0 / (w * w - 4.0), 0.0), 1.0, 3.0, 64);
        let f = fit_resonance(&s, FitModel::Regime1).unwrap();
        assert!(!f.fallback);
        assert!((f.omega_r2 - 4.0).abs() < 1e-10);
        assert!((f.residue - 1.0).norm() < 1e-10);
        assert!((f.goodness - 1.0).abs() < 1e-10);
        let s2 = series(|w| C64::new(0.3 * w * w / (w * w - 4.0), -0.1 * w * w / (w * w - 4.0)), 1.0, 3.0, 64);
        let f2 = fit_resonance(&s2, FitModel::Regime2).unwrap();
        assert!((f2.omega_r2 - 4.0).abs() < 1e-10);
        assert!((f2.residue - C64::new(0.3, -0.1)).norm() < 1e-10);
        assert!((f2.eval(s2.omegas[47]) - s2.values[47]).norm() < 1e-9);
    }

    #[test]
    fn flat_series_has_no_resonance() {
        let s = series(|_| C64::new(1.0, 0.5), 1.0, 3.0, 32);
        assert!(matches!(fit_resonance(&s, FitModel::Regime1), Err(Error::NoResonance(_))));
        let short = series(|w| C64::new(1.0 / (w * w - 4.0), 0.0), 1.0, 3.0, 7);
        assert!(matches!(fit_resonance(&short, FitModel::Regime1), Err(Error::Precondition(_))));
    }

    #[test]
    fn density_round_trip() {
        let fit = ResonanceFit {
            omega_r2: 3.0,
            residue: C64::new(1.0, 0.0),
            model: FitModel::Regime1,
            goodness: 1.0,
            fallback: false,
            samples: 10,
        };
        let mu = 8.0 * PI / 3.0;
        assert!((recover_density(&fit, 1.0, mu, MinnaertConstant::EightPi).unwrap() - 1.0).abs() < 1e-14);
        assert!((recover_density(&fit, 1.0, mu, MinnaertConstant::FourPi).unwrap() - 0.5).abs() < 1e-14);
        let twice = ResonanceFit { omega_r2: 6.0, ..fit };
        assert!((recover_density(&twice, 1.0, mu, MinnaertConstant::EightPi).unwrap() - 0.5).abs() < 1e-14);
        let bad = ResonanceFit { omega_r2: 0.0, ..fit };
        assert!(matches!(recover_density(&bad, 1.0, mu, MinnaertConstant::EightPi), Err(Error::Fit(_))));
    }

    #[test]
    fn metrics_of_identity_and_bias() {
        let t = vec![1.0, 2.0, 4.0];
        let same: Vec<Option<f64>> = t.iter().map(|x| Some(*x)).collect();
        let m = error_metric(&same, &t);
        assert_eq!((m.linf, m.l2, m.count), (0.0, 0.0, 3));
        let twice: Vec<Option<f64>> = t.iter().map(|x| Some(2.0 * x)).collect();
        let m = error_metric(&twice, &t);
        assert!((m.linf - 1.0).abs() < 1e-15 && (m.l2 - 1.0).abs() < 1e-15);
        let partial = vec![Some(1.5), None, Some(3.0)];
        let m = error_metric(&partial, &t);
        assert_eq!(m.count, 2);
        assert!((m.linf - 0.5).abs() < 1e-15);
        assert!((m.l2 - (1.25f64 / 17.0).sqrt()).abs() < 1e-15);
    }
}
