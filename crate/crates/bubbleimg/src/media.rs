//! Scenario model: background medium, bubble, band, scan grid and contrasts.

use crate::error::{Error, Result};
use crate::geometry::ShapeRef;
use crate::Vec3;
use serde::{Deserialize, Serialize};

/// Regular lattice of nodes `origin + (i, j, k)·h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub origin: Vec3,
    pub h: f64,
    pub dims: [usize; 3],
}

impl Grid3 {
    /// Nodes covering the box `[lo, hi]`; the extent must be a multiple of `h`.
    pub fn from_box(lo: Vec3, hi: Vec3, h: f64) -> Result<Grid3> {
        if !(h > 0.0) {
            return Err(Error::Domain(format!("grid spacing must be positive, got {h}")));
        }
        let mut dims = [0; 3];
        for d in 0..3 {
            let cells = (hi[d] - lo[d]) / h;
            let r = cells.round();
            if !(r >= 2.0) || (cells - r).abs() > 1e-6 * r.max(1.0) {
                return Err(Error::Domain(format!(
                    "box extent {} on axis {d} is not a multiple (≥ 2) of h = {h}",
                    hi[d] - lo[d]
                )));
            }
            dims[d] = r as usize + 1;
        }
        Ok(Grid3 { origin: lo, h, dims })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let j = (idx / self.dims[2]) % self.dims[1];
        let i = idx / (self.dims[1] * self.dims[2]);
        [i, j, k]
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.origin[0] + i as f64 * self.h,
            self.origin[1] + j as f64 * self.h,
            self.origin[2] + k as f64 * self.h,
        ]
    }

    pub fn node_at(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.ijk(idx);
        self.node(i, j, k)
    }

    pub fn upper(&self) -> Vec3 {
        self.node(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    pub fn diameter(&self) -> f64 {
        crate::numerics::vec3::dist(self.origin, self.upper())
    }

    pub fn contains(&self, x: Vec3) -> bool {
        let up = self.upper();
        (0..3).all(|d| x[d] >= self.origin[d] && x[d] <= up[d])
    }

    /// Whether `x` lies at least `cells` cells inside the box on every axis.
    pub fn contains_interior(&self, x: Vec3, cells: f64) -> bool {
        let up = self.upper();
        let m = cells * self.h * (1.0 - 1e-9);
        (0..3).all(|d| x[d] - self.origin[d] >= m && up[d] - x[d] >= m)
    }

    /// Lower cell corner and local coordinates in `[0, 1]³`.
    pub fn locate(&self, x: Vec3) -> Option<([usize; 3], [f64; 3])> {
        if !self.contains(x) {
            return None;
        }
        let mut cell = [0; 3];
        let mut t = [0.0; 3];
        for d in 0..3 {
            let s = (x[d] - self.origin[d]) / self.h;
            let c = (s.floor() as usize).min(self.dims[d] - 2);
            cell[d] = c;
            t[d] = s - c as f64;
        }
        Some((cell, t))
    }

    /// Nearest node index when `x` coincides with a node to `tol·h`.
    pub fn node_index_of(&self, x: Vec3, tol: f64) -> Option<usize> {
        let mut ijk = [0; 3];
        for d in 0..3 {
            let s = (x[d] - self.origin[d]) / self.h;
            let r = s.round();
            if (s - r).abs() > tol || r < 0.0 || r as usize >= self.dims[d] {
                return None;
            }
            ijk[d] = r as usize;
        }
        Some(self.index(ijk[0], ijk[1], ijk[2]))
    }

    /// Trilinear interpolation of nodal data.
    pub fn interpolate<T>(&self, data: &[T], x: Vec3) -> Option<T>
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        let (c, t) = self.locate(x)?;
        let mut acc: Option<T> = None;
        for di in 0..2 {
            let wi = if di == 0 { 1.0 - t[0] } else { t[0] };
            for dj in 0..2 {
                let wj = if dj == 0 { 1.0 - t[1] } else { t[1] };
                for dk in 0..2 {
                    let wk = if dk == 0 { 1.0 - t[2] } else { t[2] };
                    let v = data[self.index(c[0] + di, c[1] + dj, c[2] + dk)] * (wi * wj * wk);
                    acc = Some(match acc {
                        None => v,
                        Some(a) => a + v,
                    });
                }
            }
        }
        acc
    }
}

/// Gaussian perturbation of the background coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub center: Vec3,
    pub width: f64,
    pub delta_rho: f64,
    pub delta_k: f64,
}

impl GaussianBump {
    pub fn profile(&self, x: Vec3) -> f64 {
        let d2 = crate::numerics::vec3::dist(x, self.center).powi(2);
        (-d2 / (2.0 * self.width * self.width)).exp()
    }
}

/// Pointwise coefficient sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub rho: f64,
    pub k: f64,
    pub kappa: f64,
}

/// Variable density and bulk modulus on a grid, constant outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundMedium {
    grid: Grid3,
    rho0: Vec<f64>,
    k0: Vec<f64>,
    exterior_rho: f64,
    exterior_k: f64,
}

const BOUNDARY_TOL: f64 = 1e-9;
const TAIL_TOL: f64 = 1e-4;

impl BackgroundMedium {
    pub fn new(grid: Grid3, rho0: Vec<f64>, k0: Vec<f64>, exterior_rho: f64, exterior_k: f64) -> Result<Self> {
        if rho0.len() != grid.len() || k0.len() != grid.len() {
            return Err(Error::Data(format!(
                "field lengths {}/{} do not match grid size {}",
                rho0.len(),
                k0.len(),
                grid.len()
            )));
        }
        if !(exterior_rho > 0.0 && exterior_k > 0.0) {
            return Err(Error::Data("exterior coefficients must be positive".into()));
        }
        for (idx, (&r, &k)) in rho0.iter().zip(&k0).enumerate() {
            if !(r > 0.0 && k > 0.0) || !r.is_finite() || !k.is_finite() {
                return Err(Error::Data(format!(
                    "non-positive or non-finite coefficient at node {:?}: rho={r}, k={k}",
                    grid.ijk(idx)
                )));
            }
            let [i, j, kk] = grid.ijk(idx);
            let on_boundary = i == 0
                || j == 0
                || kk == 0
                || i + 1 == grid.dims[0]
                || j + 1 == grid.dims[1]
                || kk + 1 == grid.dims[2];
            if on_boundary
                && ((r - exterior_rho).abs() > BOUNDARY_TOL * exterior_rho
                    || (k - exterior_k).abs() > BOUNDARY_TOL * exterior_k)
            {
                return Err(Error::Data(format!(
                    "boundary node {:?} differs from the exterior values (rho={r}, k={k})",
                    [i, j, kk]
                )));
            }
        }
        Ok(BackgroundMedium {
            grid,
            rho0,
            k0,
            exterior_rho,
            exterior_k,
        })
    }

    pub fn homogeneous(grid: Grid3, rho: f64, k: f64) -> Self {
        BackgroundMedium {
            grid,
            rho0: vec![rho; grid.len()],
            k0: vec![k; grid.len()],
            exterior_rho: rho,
            exterior_k: k,
        }
    }

    /// Rasterize Gaussian bumps on a constant baseline. Tails below
    /// `TAIL_TOL` (relative) are cut off on the boundary layer.
    pub fn from_phantoms(grid: Grid3, exterior_rho: f64, exterior_k: f64, bumps: &[GaussianBump]) -> Result<Self> {
        let mut rho0 = vec![exterior_rho; grid.len()];
        let mut k0 = vec![exterior_k; grid.len()];
        for idx in 0..grid.len() {
            let x = grid.node_at(idx);
            for b in bumps {
                let g = b.profile(x);
                rho0[idx] += b.delta_rho * g;
                k0[idx] += b.delta_k * g;
            }
            let [i, j, k] = grid.ijk(idx);
            let boundary = i == 0 || j == 0 || k == 0 || i + 1 == grid.dims[0] || j + 1 == grid.dims[1] || k + 1 == grid.dims[2];
            if boundary
                && (rho0[idx] - exterior_rho).abs() <= TAIL_TOL * exterior_rho
                && (k0[idx] - exterior_k).abs() <= TAIL_TOL * exterior_k
            {
                rho0[idx] = exterior_rho;
                k0[idx] = exterior_k;
            }
        }
        BackgroundMedium::new(grid, rho0, k0, exterior_rho, exterior_k)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }
    pub fn rho0(&self) -> &[f64] {
        &self.rho0
    }
    pub fn k0(&self) -> &[f64] {
        &self.k0
    }
    pub fn exterior_rho(&self) -> f64 {
        self.exterior_rho
    }
    pub fn exterior_k(&self) -> f64 {
        self.exterior_k
    }

    /// Exterior wavenumber `ω √(ρ̄₀/k̄₀)`.
    pub fn exterior_kappa(&self, omega: f64) -> f64 {
        omega * (self.exterior_rho / self.exterior_k).sqrt()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.rho0.iter().all(|&r| r == self.exterior_rho) && self.k0.iter().all(|&k| k == self.exterior_k)
    }

    pub fn rho_range(&self) -> (f64, f64) {
        let lo = self.rho0.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.rho0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// `(ρ₀, k₀)` at `x`: trilinear inside the grid, exterior values outside.
    pub fn sample(&self, x: Vec3) -> Result<(f64, f64)> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite sample point {x:?}")));
        }
        match (self.grid.interpolate(&self.rho0, x), self.grid.interpolate(&self.k0, x)) {
            (Some(r), Some(k)) => {
                if r.is_nan() || k.is_nan() {
                    Err(Error::Data(format!("NaN coefficient near {x:?}")))
                } else {
                    Ok((r, k))
                }
            }
            _ => Ok((self.exterior_rho, self.exterior_k)),
        }
    }

    /// Coefficients and local wavenumber `κ₀ = ω√(ρ₀/k₀)` at `x`.
    pub fn sample_background(&self, x: Vec3, omega: f64) -> Result<Sample> {
        let (rho, k) = self.sample(x)?;
        Ok(Sample {
            rho,
            k,
            kappa: omega * (rho / k).sqrt(),
        })
    }
}

/// Contrast regime of the injected bubble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Minnaert,
    BodyWave,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Minnaert => "minnaert",
            Regime::BodyWave => "body_wave",
        }
    }
}

/// Bubble `D = z + εB` with scaled contrasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubbleSpec {
    pub shape: ShapeRef,
    pub center: Vec3,
    pub eps: f64,
    pub rho_bar: f64,
    pub k_bar: f64,
    pub regime: Regime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
}

impl BubbleSpec {
    pub fn at(&self, center: Vec3) -> BubbleSpec {
        BubbleSpec {
            center,
            ..self.clone()
        }
    }

    pub fn with_eps(&self, eps: f64) -> BubbleSpec {
        BubbleSpec { eps, ..self.clone() }
    }

    /// Physical interior density.
    pub fn rho1(&self) -> f64 {
        match self.regime {
            Regime::Minnaert => self.rho_bar * self.eps * self.eps,
            Regime::BodyWave => self.rho_bar,
        }
    }

    /// Physical interior bulk modulus.
    pub fn k1(&self) -> f64 {
        self.k_bar * self.eps * self.eps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.rho_bar > 0.0 && self.k_bar > 0.0) {
            return Err(Error::Domain("bubble eps, rho_bar and k_bar must be positive".into()));
        }
        if self.regime == Regime::BodyWave {
            match self.j {
                Some(j) if j > 0.0 => {}
                _ => return Err(Error::Domain("body-wave bubbles need a positive exponent j".into())),
            }
        }
        Ok(())
    }
}

/// Angular-frequency band sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub omega_min: f64,
    pub omega_max: f64,
    pub count: usize,
}

impl FrequencyBand {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_min > 0.0 && self.omega_min < self.omega_max && self.count >= 2) {
            return Err(Error::Domain(format!("invalid band {self:?}")));
        }
        Ok(())
    }

    pub fn omegas(&self) -> Vec<f64> {
        let n = self.count - 1;
        (0..self.count)
            .map(|i| {
                if i == n {
                    self.omega_max
                } else {
                    self.omega_min + (self.omega_max - self.omega_min) * (i as f64) / (n as f64)
                }
            })
            .collect()
    }
}

/// Regular lattice of candidate bubble centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
}

impl ScanGrid {
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lattice(&self) -> Grid3 {
        Grid3 {
            origin: self.origin,
            h: self.spacing,
            dims: self.dims,
        }
    }

    pub fn points(&self) -> Vec<Vec3> {
        let g = self.lattice();
        (0..g.len()).map(|i| g.node_at(i)).collect()
    }

    /// Every centre must sit at least one medium cell inside the grid.
    pub fn validate(&self, medium: &Grid3) -> Result<()> {
        if !(self.spacing > 0.0) || self.dims.contains(&0) {
            return Err(Error::Domain("scan grid needs positive spacing and dims".into()));
        }
        for z in self.points() {
            if !medium.contains_interior(z, 1.0) {
                return Err(Error::Domain(format!("scan point {z:?} is not strictly inside the medium grid")));
            }
        }
        Ok(())
    }
}

/// Contrast parameters at the bubble centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub rho1: f64,
    pub k1: f64,
    pub rho0_z: f64,
    pub k0_z: f64,
}

impl ContrastParams {
    /// `γ = ρ₁/(ρ₀ k₁) − 1/k₀`, the second form of the same quantity.
    pub fn gamma_alt(&self) -> f64 {
        self.rho1 / (self.rho0_z * self.k1) - 1.0 / self.k0_z
    }

    /// Interior coefficients recovered from `(α, β)`.
    pub fn interior_from_contrasts(&self) -> (f64, f64) {
        (1.0 / (self.alpha + 1.0 / self.rho0_z), 1.0 / (self.beta + 1.0 / self.k0_z))
    }

    /// Relative gap `|ρ₁ − ρ₀(z)|/ρ₀(z)`; small in the body-wave regime.
    pub fn body_wave_gap(&self) -> f64 {
        (self.rho1 - self.rho0_z).abs() / self.rho0_z
    }
}

pub fn contrast_params(medium: &BackgroundMedium, bubble: &BubbleSpec) -> Result<ContrastParams> {
    if !medium.grid().contains(bubble.center) {
        return Err(Error::Domain(format!("bubble centre {:?} is outside the medium grid", bubble.center)));
    }
    let (rho0_z, k0_z) = medium.sample(bubble.center)?;
    Ok(contrasts_from(bubble, rho0_z, k0_z))
}

/// Contrast algebra for given background values at the centre.
pub fn contrasts_from(bubble: &BubbleSpec, rho0_z: f64, k0_z: f64) -> ContrastParams {
    let rho1 = bubble.rho1();
    let k1 = bubble.k1();
    let alpha = 1.0 / rho1 - 1.0 / rho0_z;
    let beta = 1.0 / k1 - 1.0 / k0_z;
    ContrastParams {
        alpha,
        beta,
        gamma: beta - alpha * rho1 / k1,
        rho1,
        k1,
        rho0_z,
        k0_z,
    }
}

/// Constant in the density-recovery and band formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MinnaertConstant {
    #[default]
    #[serde(rename = "8pi")]
    EightPi,
    #[serde(rename = "4pi")]
    FourPi,
}

impl MinnaertConstant {
    pub fn value(&self) -> f64 {
        match self {
            MinnaertConstant::EightPi => 8.0 * std::f64::consts::PI,
            MinnaertConstant::FourPi => 4.0 * std::f64::consts::PI,
        }
    }
}

impl std::str::FromStr for MinnaertConstant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "8pi" => Ok(MinnaertConstant::EightPi),
            "4pi" => Ok(MinnaertConstant::FourPi),
            _ => Err(Error::Domain(format!("unknown Minnaert constant {s:?}"))),
        }
    }
}

/// Resonance the band has to bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandTarget {
    Minnaert { mu_shape: f64, constant: MinnaertConstant },
    BodyWave { omega: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandReport {
    pub required_min: f64,
    pub required_max: f64,
    pub bracketed: bool,
    /// `required_min / ω_min`; at least one when the low side is covered.
    pub margin_low: f64,
    /// `ω_max / required_max`; at least one when the high side is covered.
    pub margin_high: f64,
}

pub fn check_band(medium: &BackgroundMedium, band: &FrequencyBand, bubble: &BubbleSpec, target: BandTarget) -> BandReport {
    let (req_min, req_max) = match target {
        BandTarget::Minnaert { mu_shape, constant } => {
            let (lo, hi) = medium.rho_range();
            let c = constant.value() * bubble.k_bar / mu_shape;
            ((c / hi).sqrt(), (c / lo).sqrt())
        }
        BandTarget::BodyWave { omega } => (omega, omega),
    };
    let margin_low = req_min / band.omega_min;
    let margin_high = band.omega_max / req_max;
    BandReport {
        required_min: req_min,
        required_max: req_max,
        bracketed: margin_low >= 1.0 && margin_high >= 1.0,
        margin_low,
        margin_high,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_grid() -> Grid3 {
        Grid3::from_box([-1.0; 3], [1.0; 3], 0.25).unwrap()
    }

    fn bubble(regime: Regime, eps: f64, rho_bar: f64, k_bar: f64) -> BubbleSpec {
        BubbleSpec {
            shape: ShapeRef::Ball,
            center: [0.0; 3],
            eps,
            rho_bar,
            k_bar,
            regime,
            j: Some(1.0),
        }
    }

    #[test]
    fn zero_contrast() {
        let m = BackgroundMedium::homogeneous(unit_grid(), 1.0, 1.0);
        let mut b = bubble(Regime::BodyWave, 0.1, 1.0, 100.0);
        b.k_bar = 1.0 / (b.eps * b.eps);
        let c = contrast_params(&m, &b).unwrap();
        assert_eq!(c.alpha, 0.0);
        assert!(c.beta.abs() < 1e-15);
        assert!(c.gamma.abs() < 1e-15);
    }

    #[test]
    fn minnaert_arithmetic() {
        let m = BackgroundMedium::homogeneous(unit_grid(), 1000.0, 2e9);
        let c = contrast_params(&m, &bubble(Regime::Minnaert, 0.01, 2000.0, 1e5)).unwrap();
        assert!((c.rho1 - 0.2).abs() < 1e-15);
        assert!((c.k1 - 10.0).abs() < 1e-12);
        assert!((c.alpha - (5.0 - 1e-3)).abs() < 1e-12);
        assert!((c.beta - (0.1 - 5e-10)).abs() < 1e-15);
        assert!((c.gamma - (c.beta - c.alpha * 0.02)).abs() < 1e-15);
    }

    #[test]
    fn body_wave_density_close_to_background() {
        let m = BackgroundMedium::homogeneous(unit_grid(), 1000.0, 2e9);
        let eps = 0.1;
        let b = bubble(Regime::BodyWave, eps, 1000.0 * (1.0 + 0.5 * eps), 1e5);
        let c = contrast_params(&m, &b).unwrap();
        assert!(c.body_wave_gap() <= eps);
        assert!((c.alpha * c.rho0_z).abs() <= eps);
    }

    #[test]
    fn outside_centre_is_domain_error() {
        let m = BackgroundMedium::homogeneous(unit_grid(), 1.0, 1.0);
        let b = bubble(Regime::Minnaert, 0.01, 2.0, 1.0).at([3.0, 0.0, 0.0]);
        assert!(matches!(contrast_params(&m, &b), Err(Error::Domain(_))));
    }

    #[test]
    fn boundary_layer_must_match_exterior() {
        let g = unit_grid();
        let bump = GaussianBump {
            center: [0.9, 0.0, 0.0],
            width: 0.3,
            delta_rho: 100.0,
            delta_k: 0.0,
        };
        assert!(matches!(BackgroundMedium::from_phantoms(g, 1000.0, 2e9, &[bump]), Err(Error::Data(_))));
        let mut rho = vec![1.0; g.len()];
        rho[g.index(4, 4, 4)] = -1.0;
        assert!(BackgroundMedium::new(g, rho, vec![1.0; g.len()], 1.0, 1.0).is_err());
    }

    #[test]
    fn homogeneous_sampling_and_nodes() {
        let g = unit_grid();
        let m = BackgroundMedium::homogeneous(g, 3.0, 12.0);
        let s = m.sample_background([5.0, 0.0, 0.0], 2.0).unwrap();
        assert_eq!((s.rho, s.k), (3.0, 12.0));
        assert!((s.kappa - 1.0).abs() < 1e-15);
        let bump = GaussianBump {
            center: [0.0; 3],
            width: 0.1,
            delta_rho: 0.5,
            delta_k: 0.25,
        };
        let m = BackgroundMedium::from_phantoms(g, 1.0, 1.0, &[bump]).unwrap();
        for idx in [0, 17, g.index(4, 4, 4), g.index(3, 5, 2)] {
            let (r, k) = m.sample(g.node_at(idx)).unwrap();
            assert!((r - m.rho0()[idx]).abs() < 1e-14 && (k - m.k0()[idx]).abs() < 1e-14);
        }
    }

    #[test]
    fn trilinear_reproduces_linear_fields() {
        let g = unit_grid();
        let f = |x: Vec3| 2.0 + 0.3 * x[0] - 0.2 * x[1] + 0.1 * x[2];
        let data: Vec<f64> = (0..g.len()).map(|i| f(g.node_at(i))).collect();
        // Cell centre: mean of the eight corners.
        let c = [-0.875, 0.125, 0.625];
        let v = g.interpolate(&data, c).unwrap();
        let (cell, _) = g.locate(c).unwrap();
        let mut mean = 0.0;
        for di in 0..2 {
            for dj in 0..2 {
                for dk in 0..2 {
                    mean += data[g.index(cell[0] + di, cell[1] + dj, cell[2] + dk)] / 8.0;
                }
            }
        }
        assert!((v - mean).abs() < 1e-14 && (v - f(c)).abs() < 1e-14);
    }

    #[test]
    fn band_reports() {
        let m = BackgroundMedium::homogeneous(unit_grid(), 1.0, 1.0);
        let b = bubble(Regime::Minnaert, 0.01, 2.0, 1.0);
        let mu = 8.0 * std::f64::consts::PI / 3.0;
        let target = BandTarget::Minnaert {
            mu_shape: mu,
            constant: MinnaertConstant::EightPi,
        };
        let wm = 3f64.sqrt();
        let r = check_band(&m, &FrequencyBand { omega_min: 0.5 * wm, omega_max: 2.0 * wm, count: 8 }, &b, target);
        assert!(r.bracketed);
        let r = check_band(&m, &FrequencyBand { omega_min: 0.1 * wm, omega_max: 0.5 * wm, count: 8 }, &b, target);
        assert!(!r.bracketed && r.margin_high < 1.0);
    }

    #[test]
    fn band_endpoints_for_density_range() {
        let g = Grid3::from_box([-1.0; 3], [1.0; 3], 0.05).unwrap();
        let bumps = [
            GaussianBump { center: [0.2, 0.0, 0.0], width: 0.1, delta_rho: 100.0, delta_k: 0.0 },
            GaussianBump { center: [-0.2, 0.0, 0.0], width: 0.1, delta_rho: -100.0, delta_k: 0.0 },
        ];
        let m = BackgroundMedium::from_phantoms(g, 1000.0, 2e9, &bumps).unwrap();
        let (lo, hi) = m.rho_range();
        let mu = 8.0 * std::f64::consts::PI / 3.0;
        let b = bubble(Regime::Minnaert, 0.01, 2000.0, 1e5);
        let r = check_band(&m, &FrequencyBand { omega_min: 1.0, omega_max: 100.0, count: 8 }, &b, BandTarget::Minnaert { mu_shape: mu, constant: MinnaertConstant::EightPi });
        // Sphere: ω² = 3 k̄₁ / ρ₀.
        assert!((r.required_min - (3e5 / hi).sqrt()).abs() < 1e-12);
        assert!((r.required_max - (3e5 / lo).sqrt()).abs() < 1e-12);
        assert!((lo - 900.0).abs() < 1.0 && (hi - 1100.0).abs() < 1.0);
    }

    proptest! {
        #[test]
        fn contrast_algebra_inverts(rho0 in 0.5f64..2000.0, k0 in 0.5f64..3e9, rb in 0.5f64..5000.0, kb in 0.5f64..1e6, eps in 1e-3f64..0.2) {
            let b = bubble(Regime::Minnaert, eps, rb, kb);
            let c = contrasts_from(&b, rho0, k0);
            let (r1, k1) = c.interior_from_contrasts();
            prop_assert!((r1 - c.rho1).abs() <= 1e-12 * c.rho1);
            prop_assert!((k1 - c.k1).abs() <= 1e-12 * c.k1);
            prop_assert!((c.gamma - c.gamma_alt()).abs() <= 1e-12 * c.gamma.abs().max(c.beta.abs()));
        }

        #[test]
        fn band_check_is_monotone(lo in 0.1f64..3.0, hi in 3.0f64..10.0, grow_lo in 0.0f64..0.09, grow_hi in 0.0f64..5.0) {
            let m = BackgroundMedium::homogeneous(unit_grid(), 1.0, 1.0);
            let b = bubble(Regime::Minnaert, 0.01, 2.0, 1.0);
            let t = BandTarget::Minnaert { mu_shape: 8.0 * std::f64::consts::PI / 3.0, constant: MinnaertConstant::EightPi };
            let r1 = check_band(&m, &FrequencyBand { omega_min: lo, omega_max: hi, count: 4 }, &b, t);
            let r2 = check_band(&m, &FrequencyBand { omega_min: lo - grow_lo, omega_max: hi + grow_hi, count: 4 }, &b, t);
            prop_assert!(!r1.bracketed || r2.bracketed);
        }
    }
}
