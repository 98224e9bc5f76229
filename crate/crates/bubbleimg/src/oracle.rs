//! Full-wave references: the partial-wave series for a penetrable sphere, layer
//! potentials on triangulated surfaces, and a small coupled volume/surface solve.
//!
//! All kernels carry the background density: `G(x) = ρ₀ e^{iκ₀|x|}/(4π|x|)`.

use crate::error::{Error, Result};
use crate::geometry::{ShapeMesh, Voxelization};
use crate::media::{BackgroundMedium, BubbleSpec};
use crate::numerics::quad::{solid_angle, tri_inverse_distance, TriRule};
use crate::numerics::special::{legendre, sph_derivs, sph_jn, sph_yn};
use crate::numerics::vec3::{add, dist, dot, norm, scale, sub};
use crate::{Vec3, C64};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Penetrable sphere of radius `a` centred at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereScatterer {
    pub radius: f64,
    pub rho1: f64,
    pub k1: f64,
    pub rho0: f64,
    pub k0: f64,
    /// Truncation order; `None` picks `⌈max(κ₀a, κ₁a)⌉ + 10`.
    pub order: Option<usize>,
}

impl SphereScatterer {
    /// The sphere `εB` with the physical contrasts of `bubble`.
    pub fn from_bubble(bubble: &BubbleSpec, rho0: f64, k0: f64) -> SphereScatterer {
        SphereScatterer {
            radius: bubble.eps,
            rho1: bubble.rho1(),
            k1: bubble.k1(),
            rho0,
            k0,
            order: None,
        }
    }

    pub fn default_order(&self, omega: f64) -> usize {
        let ka = omega * (self.rho0 / self.k0).sqrt() * self.radius;
        let k1a = omega * (self.rho1 / self.k1).sqrt() * self.radius;
        ka.max(k1a).ceil() as usize + 10
    }

    /// Scattering coefficients `A_l`, exterior field `Σ A_l h_l(κ₀r) P_l`.
    pub fn coefficients(&self, omega: f64) -> Result<Vec<C64>> {
        if !(self.radius > 0.0 && self.rho1 > 0.0 && self.k1 > 0.0 && self.rho0 > 0.0 && self.k0 > 0.0) {
            return Err(Error::Domain("sphere radius and material constants must be positive".into()));
        }
        if !(omega > 0.0) {
            return Err(Error::Domain("frequency must be positive".into()));
        }
        let order = self.order.unwrap_or_else(|| self.default_order(omega));
        let k0 = omega * (self.rho0 / self.k0).sqrt();
        let k1 = omega * (self.rho1 / self.k1).sqrt();
        let (x0, x1) = (k0 * self.radius, k1 * self.radius);
        let j0 = sph_jn(order + 1, x0);
        let y0 = sph_yn(order + 1, x0);
        let j1 = sph_jn(order + 1, x1);
        let (dj0, dy0, dj1) = (sph_derivs(&j0, x0), sph_derivs(&y0, x0), sph_derivs(&j1, x1));
        let i = C64::i();
        let mut out = Vec::with_capacity(order + 1);
        for l in 0..=order {
            let c = (2 * l + 1) as f64 * i.powu(l as u32);
            let h = C64::new(j0[l], y0[l]);
            let dh = C64::new(dj0[l], dy0[l]);
            // Columns: A_l and B_l; rows: continuity of u and of ρ⁻¹∂_r u.
            let m = [
                [h, C64::from(-j1[l])],
                [dh * k0 / self.rho0, C64::from(-dj1[l] * k1 / self.rho1)],
            ];
            let rhs = [-c * j0[l], -c * dj0[l] * k0 / self.rho0];
            let s0 = m[0][0].norm().max(m[1][0].norm());
            let s1 = m[0][1].norm().max(m[1][1].norm());
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if !(det.norm() > 1e-13 * s0 * s1) {
                return Err(Error::ModeMatch(l));
            }
            out.push((rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det);
        }
        Ok(out)
    }

    /// Far field at `x̂` for incidence `θ`.
    pub fn farfield(&self, omega: f64, theta: Vec3, xhat: Vec3) -> Result<C64> {
        let a = self.coefficients(omega)?;
        let k0 = omega * (self.rho0 / self.k0).sqrt();
        let t = dot(theta, xhat) / (norm(theta) * norm(xhat));
        let p = legendre(a.len() - 1, t.clamp(-1.0, 1.0));
        let mi = -C64::i();
        // Summed from the highest order down so the small tail enters first.
        let mut sum = C64::new(0.0, 0.0);
        for l in (0..a.len()).rev() {
            sum += a[l] * mi.powu(l as u32 + 1) * p[l];
        }
        Ok(sum / k0)
    }
}

/// Exact far field of a penetrable sphere.
pub fn sphere_exact_farfield(sph: &SphereScatterer, omega: f64, theta: Vec3, xhat: Vec3) -> Result<C64> {
    sph.farfield(omega, theta, xhat)
}

/// Boundary operators available through [`layer_apply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// `S[f](x) = ∫ G(x−y) f(y) dσ(y)`.
    Single,
    /// `K[f](x) = p.v. ∫ ∂_{ν(y)} G(x−y) f(y) dσ(y)`.
    Double,
    /// `K*[f](x) = p.v. ∫ ∂_{ν(x)} G(x−y) f(y) dσ(y)`.
    DoubleAdjoint,
}

/// Far-panel rule for the smooth kernel remainders.
fn panel_rule() -> TriRule {
    TriRule::new(7).expect("seven-point rule")
}

/// `(e^{iκr} − 1)/r`, finite at `r = 0`.
fn helmholtz_remainder(kappa: f64, r: f64) -> C64 {
    let x = kappa * r;
    if x < 1e-4 {
        return C64::new(-kappa * x / 2.0, kappa * (1.0 - x * x / 6.0));
    }
    (C64::from_polar(1.0, x) - 1.0) / r
}

/// `d/dr [(e^{iκr} − 1)/r]`.
fn helmholtz_remainder_dr(kappa: f64, r: f64) -> C64 {
    let x = kappa * r;
    if x < 1e-3 {
        return C64::new(-kappa * kappa / 2.0, -kappa * x * kappa / 3.0);
    }
    let e = C64::from_polar(1.0, x);
    (e * C64::new(-1.0, x) + 1.0) / (r * r)
}

/// Solid angle of panel `j` seen from the centroid of panel `i`; the
/// principal value drops the panel's own contribution.
fn panel_solid_angle(i: usize, j: usize, x: Vec3, t: &[Vec3; 3]) -> f64 {
    if i == j {
        0.0
    } else {
        solid_angle(x, t[0], t[1], t[2])
    }
}

/// Panel-centroid collocation of boundary operators on a flat mesh.
///
/// Static parts use exact panel integrals (solid angles, `∫1/r`); the
/// bounded remainders `G − G⁰` are quadrated. The adjoint static part is the
/// area-weighted transpose of the double layer, so `∫K*f = ∫f K[1]` holds
/// exactly on the discrete level.
pub struct LayerOperators {
    pub centroids: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub areas: Vec<f64>,
    pub rho0: f64,
    pub kappa: f64,
    single: DMatrix<C64>,
    double: DMatrix<C64>,
    adjoint: DMatrix<C64>,
}

impl LayerOperators {
    pub fn new(mesh: &ShapeMesh, rho0: f64, kappa: f64) -> LayerOperators {
        let n = mesh.len();
        let centroids: Vec<Vec3> = (0..n).map(|i| mesh.centroid(i)).collect();
        let normals = mesh.normals().to_vec();
        let areas = mesh.areas().to_vec();
        let rule = panel_rule();
        let nodes: Vec<Vec<Vec3>> = (0..n).map(|j| rule.points(&mesh.triangle(j))).collect();
        let c = rho0 / (4.0 * PI);
        let rows: Vec<(Vec<C64>, Vec<C64>, Vec<C64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = centroids[i];
                let mut s = vec![C64::new(0.0, 0.0); n];
                let mut d = vec![C64::new(0.0, 0.0); n];
                let mut a = vec![C64::new(0.0, 0.0); n];
                for j in 0..n {
                    let t = mesh.triangle(j);
                    let mut rem = C64::new(0.0, 0.0);
                    let mut rem_y = C64::new(0.0, 0.0);
                    let mut rem_x = C64::new(0.0, 0.0);
                    for (y, w) in nodes[j].iter().zip(&rule.weights) {
                        let diff = sub(x, *y);
                        let r = norm(diff);
                        let wa = w * areas[j];
                        rem += helmholtz_remainder(kappa, r) * wa;
                        if i != j {
                            let dr = helmholtz_remainder_dr(kappa, r);
                            rem_y += dr * (-dot(diff, normals[j]) / r) * wa;
                            rem_x += dr * (dot(diff, normals[i]) / r) * wa;
                        }
                    }
                    s[j] = c * (tri_inverse_distance(x, &t) + rem);
                    // ∫_T ∂_{ν(y)} 1/r = ∫ (x−y)·ν/r³ = −Ω_T(x).
                    d[j] = c * (-panel_solid_angle(i, j, x, &t) + rem_y);
                    a[j] = c * rem_x;
                }
                (s, d, a)
            })
            .collect();
        let mut single = DMatrix::zeros(n, n);
        let mut double = DMatrix::zeros(n, n);
        let mut adjoint = DMatrix::zeros(n, n);
        for (i, (s, d, a)) in rows.into_iter().enumerate() {
            for j in 0..n {
                single[(i, j)] = s[j];
                double[(i, j)] = d[j];
                adjoint[(i, j)] = a[j];
            }
        }
        for i in 0..n {
            let ti = mesh.triangle(i);
            for j in 0..n {
                let static_ji = -c * panel_solid_angle(j, i, centroids[j], &ti);
                adjoint[(i, j)] += static_ji * areas[j] / areas[i];
            }
        }
        LayerOperators {
            centroids,
            normals,
            areas,
            rho0,
            kappa,
            single,
            double,
            adjoint,
        }
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn matrix(&self, kind: LayerKind) -> &DMatrix<C64> {
        match kind {
            LayerKind::Single => &self.single,
            LayerKind::Double => &self.double,
            LayerKind::DoubleAdjoint => &self.adjoint,
        }
    }

    pub fn apply(&self, kind: LayerKind, density: &[C64]) -> Result<Vec<C64>> {
        if density.len() != self.len() {
            return Err(Error::Domain(format!(
                "density has {} values for {} panels",
                density.len(),
                self.len()
            )));
        }
        let v = self.matrix(kind) * DVector::from_column_slice(density);
        Ok(v.iter().copied().collect())
    }
}

/// Apply a boundary operator to panel densities in a homogeneous medium.
pub fn layer_apply(mesh: &ShapeMesh, rho0: f64, k0: f64, omega: f64, kind: LayerKind, density: &[C64]) -> Result<Vec<C64>> {
    if !(rho0 > 0.0 && k0 > 0.0 && omega >= 0.0) {
        return Err(Error::Domain("layer operators need positive ρ₀, k₀ and ω ≥ 0".into()));
    }
    LayerOperators::new(mesh, rho0, omega * (rho0 / k0).sqrt()).apply(kind, density)
}

/// `J₀(f)(x) = ∫ ρ₀⁻¹(y) ∂_{ν(y)} Γ₀(x, y) f(y) dσ(y)` with the static kernel
/// `Γ₀ = ρ₀(z)/(4π|x−y|)` frozen at `z` and `ρ₀(y)` read from the medium.
pub fn j0_apply(mesh: &ShapeMesh, medium: &BackgroundMedium, z: Vec3, density: &[C64]) -> Result<Vec<C64>> {
    let n = mesh.len();
    if density.len() != n {
        return Err(Error::Domain(format!("density has {} values for {n} panels", density.len())));
    }
    let rho_z = medium.sample(z)?.0;
    let rule = panel_rule();
    let mut inv_rho = Vec::with_capacity(n);
    for j in 0..n {
        let mut acc = 0.0;
        for (y, w) in rule.points(&mesh.triangle(j)).iter().zip(&rule.weights) {
            acc += w / medium.sample(*y)?.0;
        }
        inv_rho.push(acc);
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let x = mesh.centroid(i);
            (0..n)
                .map(|j| {
                    let t = mesh.triangle(j);
                    density[j] * (-rho_z * inv_rho[j] * panel_solid_angle(i, j, x, &t) / (4.0 * PI))
                })
                .sum()
        })
        .collect())
}

/// Largest number of unknowns accepted by [`coupled_solve`].
pub const COUPLED_CAP: usize = 3000;

/// Volume field on the cells of `D` and normal derivative on the panels of `∂D`.
#[derive(Debug, Clone)]
pub struct CoupledSolution {
    pub omega: f64,
    pub theta: Vec3,
    pub rho0: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub cells: Vec<Vec3>,
    pub cell_volumes: Vec<f64>,
    pub u: Vec<C64>,
    pub panels: Vec<Vec3>,
    pub panel_areas: Vec<f64>,
    pub dnu: Vec<C64>,
    /// `∫_D u + k₁/(ω²ρ₁) ∫_{∂D} ∂_ν u` relative to `|∫_D u|`, after the solve.
    pub divergence_residual: f64,
    /// The same residual for the unconstrained discrete system.
    pub unconstrained_residual: f64,
    /// Smallest over largest pivot magnitude of the LU factorisation.
    pub pivot_ratio: f64,
}

impl CoupledSolution {
    pub fn volume_integral(&self) -> C64 {
        self.u.iter().zip(&self.cell_volumes).map(|(u, v)| u * v).sum()
    }

    pub fn surface_integral(&self) -> C64 {
        self.dnu.iter().zip(&self.panel_areas).map(|(f, a)| f * a).sum()
    }

    /// Far field from the representation `u = uⁱ + γω²N[u] − αS[∂_ν u]`.
    pub fn farfield(&self, xhat: Vec3) -> C64 {
        let xh = scale(xhat, 1.0 / norm(xhat));
        let phase = |y: Vec3| C64::from_polar(1.0, -self.kappa * dot(xh, y));
        let vol: C64 = self
            .cells
            .iter()
            .zip(&self.u)
            .zip(&self.cell_volumes)
            .map(|((y, u), v)| phase(*y) * u * v)
            .sum();
        let surf: C64 = self
            .panels
            .iter()
            .zip(&self.dnu)
            .zip(&self.panel_areas)
            .map(|((y, f), a)| phase(*y) * f * a)
            .sum();
        (vol * self.gamma * self.omega * self.omega - surf * self.alpha) * (self.rho0 / (4.0 * PI))
    }

    /// Scattered field at a point outside `D`.
    pub fn scattered(&self, x: Vec3) -> C64 {
        let g = |y: Vec3| {
            let r = dist(x, y);
            C64::from_polar(self.rho0 / (4.0 * PI * r), self.kappa * r)
        };
        let vol: C64 = self
            .cells
            .iter()
            .zip(&self.u)
            .zip(&self.cell_volumes)
            .map(|((y, u), v)| g(*y) * u * v)
            .sum();
        let surf: C64 = self
            .panels
            .iter()
            .zip(&self.dnu)
            .zip(&self.panel_areas)
            .map(|((y, f), a)| g(*y) * f * a)
            .sum();
        vol * self.gamma * self.omega * self.omega - surf * self.alpha
    }
}

/// Subcells per axis for volume integrals of `∇G` near a collocation point.
const NEAR_SUBDIV: usize = 4;

/// Solve the coupled volume/surface system for `D = z + εB` in the
/// homogeneous background `(ρ̄₀, k̄₀)`.
///
/// `mesh` and `vox` describe the unit shape `B`. Rows on the cells carry the
/// Lippmann–Schwinger equation, rows on the panels its normal derivative
/// from inside. The divergence identity `∫_D u = −k₁/(ω²ρ₁) ∫_{∂D} ∂_ν u` is
/// imposed through a rank-one bordering of the same factorisation, with the
/// correction column on the surface unknowns.
pub fn coupled_solve(
    mesh: &ShapeMesh,
    vox: &Voxelization,
    rho0: f64,
    k0: f64,
    bubble: &BubbleSpec,
    omega: f64,
    theta: Vec3,
) -> Result<CoupledSolution> {
    if !(rho0 > 0.0 && k0 > 0.0 && omega > 0.0) {
        return Err(Error::Domain("coupled solve needs positive ρ₀, k₀ and ω".into()));
    }
    bubble.validate()?;
    let nv = vox.len();
    let nt = mesh.len();
    if nv + nt > COUPLED_CAP {
        return Err(Error::MemoryGuard {
            count: nv + nt,
            cap: COUPLED_CAP,
        });
    }
    let th = scale(theta, 1.0 / norm(theta));
    let (eps, z) = (bubble.eps, bubble.center);
    let (rho1, k1) = (bubble.rho1(), bubble.k1());
    let alpha = 1.0 / rho1 - 1.0 / rho0;
    let gamma = rho1 / (rho0 * k1) - 1.0 / k0;
    let kappa = omega * (rho0 / k0).sqrt();
    let w2 = omega * omega;

    let surf = mesh.scaled(eps).translated(z);
    let layer = LayerOperators::new(&surf, rho0, kappa);
    let h = vox.h * eps;
    let cells: Vec<Vec3> = vox.voxels.iter().map(|v| add(z, scale(v.center, eps))).collect();
    let cell_volumes: Vec<f64> = vox.voxels.iter().map(|v| v.weight * h * h * h).collect();
    let c4 = rho0 / (4.0 * PI);
    let self_static = crate::numerics::quad::cube_inverse_distance() / h;

    let n = nv + nt;
    let mut a = DMatrix::<C64>::zeros(n, n);
    // Cell rows.
    let cell_rows: Vec<Vec<C64>> = (0..nv)
        .into_par_iter()
        .map(|p| {
            let x = cells[p];
            let mut row = vec![C64::new(0.0, 0.0); n];
            for q in 0..nv {
                let g = if p == q {
                    c4 * C64::new(self_static, kappa) * h * h * h * vox.voxels[q].weight
                } else {
                    let r = dist(x, cells[q]);
                    C64::from_polar(c4 / r, kappa * r) * cell_volumes[q]
                };
                row[q] = -g * gamma * w2;
            }
            row[p] += 1.0;
            for j in 0..nt {
                row[nv + j] = alpha * layer_single_at(&surf, &layer, j, x);
            }
            row
        })
        .collect();
    // Subcells of cells that can be near a panel, inside-tested on the unit shape.
    let sub_offsets: Vec<Vec<Vec3>> = vox
        .voxels
        .par_iter()
        .map(|v| {
            if near_surface(mesh, v.center, 3.0 * vox.h) {
                inside_subcells(mesh, v.center, vox.h)
                    .into_iter()
                    .map(|o| scale(o, eps))
                    .collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    // Panel rows.
    let panel_rows: Vec<Vec<C64>> = (0..nt)
        .into_par_iter()
        .map(|i| {
            let x = layer.centroids[i];
            let nu = layer.normals[i];
            let mut row = vec![C64::new(0.0, 0.0); n];
            for q in 0..nv {
                row[q] = -normal_newtonian(x, nu, cells[q], h, cell_volumes[q], &sub_offsets[q], kappa, rho0) * gamma * w2;
            }
            for j in 0..nt {
                row[nv + j] = layer.adjoint[(i, j)] * alpha;
            }
            row[nv + i] += 1.0 + alpha * rho0 / 2.0;
            row
        })
        .collect();
    for (p, row) in cell_rows.into_iter().chain(panel_rows).enumerate() {
        for (q, v) in row.into_iter().enumerate() {
            a[(p, q)] = v;
        }
    }
    let mut b = DVector::<C64>::zeros(n);
    for p in 0..nv {
        b[p] = C64::from_polar(1.0, kappa * dot(th, cells[p]));
    }
    for i in 0..nt {
        let x = layer.centroids[i];
        b[nv + i] = C64::new(0.0, kappa * dot(th, layer.normals[i])) * C64::from_polar(1.0, kappa * dot(th, x));
    }
    // Constraint row d·x = 0.
    let ratio = k1 / (w2 * rho1);
    let mut d = DVector::<C64>::zeros(n);
    for q in 0..nv {
        d[q] = C64::from(cell_volumes[q]);
    }
    for j in 0..nt {
        d[nv + j] = C64::from(ratio * layer.areas[j]);
    }

    let lu = a.lu();
    let u_diag = lu.u().diagonal();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for v in u_diag.iter() {
        lo = lo.min(v.norm());
        hi = hi.max(v.norm());
    }
    let pivot_ratio = lo / hi;
    if !(pivot_ratio > 1e-13) {
        return Err(Error::Singular { rcond: pivot_ratio });
    }
    let x0 = lu.solve(&b).ok_or(Error::Singular { rcond: pivot_ratio })?;
    // The correction column lives on the surface unknowns, so a decoupled
    // system leaves the volume field untouched.
    let mut col = DVector::<C64>::zeros(n);
    for j in 0..nt {
        col[nv + j] = C64::from(layer.areas[j]);
    }
    let y = lu.solve(&col).ok_or(Error::Singular { rcond: pivot_ratio })?;
    let residual_of = |x: &DVector<C64>| {
        let vol: C64 = (0..nv).map(|q| x[q] * cell_volumes[q]).sum();
        (d.transpose() * x)[(0, 0)].norm() / vol.norm()
    };
    let unconstrained_residual = residual_of(&x0);
    let lambda = (d.transpose() * &x0)[(0, 0)] / (d.transpose() * &y)[(0, 0)];
    let x = &x0 - &y * lambda;
    let divergence_residual = residual_of(&x);

    Ok(CoupledSolution {
        omega,
        theta: th,
        rho0,
        kappa,
        alpha,
        gamma,
        u: x.rows(0, nv).iter().copied().collect(),
        dnu: x.rows(nv, nt).iter().copied().collect(),
        cells,
        cell_volumes,
        panels: layer.centroids.clone(),
        panel_areas: layer.areas.clone(),
        divergence_residual,
        unconstrained_residual,
        pivot_ratio,
    })
}

/// `∫_{T_j} G(x−y) dσ(y)` for an arbitrary point `x`.
fn layer_single_at(mesh: &ShapeMesh, layer: &LayerOperators, j: usize, x: Vec3) -> C64 {
    let t = mesh.triangle(j);
    let rule = panel_rule();
    let rem: C64 = rule
        .points(&t)
        .iter()
        .zip(&rule.weights)
        .map(|(y, w)| helmholtz_remainder(layer.kappa, dist(x, *y)) * w)
        .sum::<C64>()
        * layer.areas[j];
    (tri_inverse_distance(x, &t) + rem) * (layer.rho0 / (4.0 * PI))
}

fn near_surface(mesh: &ShapeMesh, p: Vec3, reach: f64) -> bool {
    (0..mesh.len()).any(|j| dist(mesh.centroid(j), p) < reach)
}

/// Subcell centres (offsets from the cell centre) lying inside `D`.
fn inside_subcells(mesh: &ShapeMesh, center_unit: Vec3, h_unit: f64) -> Vec<Vec3> {
    let m = NEAR_SUBDIV;
    let hs = h_unit / m as f64;
    let mut out = Vec::with_capacity(m * m * m);
    for a in 0..m {
        for b in 0..m {
            for c in 0..m {
                let off = [
                    (a as f64 + 0.5) * hs - h_unit / 2.0,
                    (b as f64 + 0.5) * hs - h_unit / 2.0,
                    (c as f64 + 0.5) * hs - h_unit / 2.0,
                ];
                if mesh.winding_number(add(center_unit, off)) > 0.5 {
                    out.push(off);
                }
            }
        }
    }
    out
}

/// `∫_{cell ∩ D} ∂_{ν(x)} G(x−y) dy`, subdividing cells near `x`.
#[allow(clippy::too_many_arguments)]
fn normal_newtonian(x: Vec3, nu: Vec3, center: Vec3, h: f64, volume: f64, sub_offsets: &[Vec3], kappa: f64, rho0: f64) -> C64 {
    let grad = |y: Vec3| {
        let diff = sub(x, y);
        let r = norm(diff);
        // ∇_x e^{iκr}/(4πr) = (x−y)(iκr − 1)e^{iκr}/(4πr³)
        C64::new(-1.0, kappa * r) * C64::from_polar(1.0, kappa * r) * (dot(diff, nu) / (4.0 * PI * r * r * r))
    };
    if dist(x, center) > 2.5 * h {
        return grad(center) * volume * rho0;
    }
    let hs = h / NEAR_SUBDIV as f64;
    let sum: C64 = sub_offsets.iter().map(|o| grad(add(center, *o))).sum();
    sum * (hs * hs * hs * rho0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(rho1: f64, k1: f64) -> SphereScatterer {
        SphereScatterer {
            radius: 0.7,
            rho1,
            k1,
            rho0: 1.3,
            k0: 2.1,
            order: None,
        }
    }

    #[test]
    fn zero_contrast_scatters_nothing() {
        let s = sphere(1.3, 2.1);
        for xh in [[0.0, 0.0, 1.0], [0.6, 0.0, -0.8], [0.0, 1.0, 0.0]] {
            let u = s.farfield(2.5, [0.0, 0.0, 1.0], xh).unwrap();
            assert!(u.norm() < 1e-12, "{u}");
        }
    }

    #[test]
    fn series_is_reciprocal_and_converged() {
        let s = sphere(3.0, 0.9);
        let th = [0.0, 0.6, 0.8];
        let xh = [0.48, -0.6, 0.64];
        let u1 = s.farfield(3.0, th, xh).unwrap();
        let u2 = s.farfield(3.0, scale(xh, -1.0), scale(th, -1.0)).unwrap();
        assert!((u1 - u2).norm() < 1e-10 * u1.norm());
        let longer = SphereScatterer {
            order: Some(s.default_order(3.0) + 15),
            ..s
        };
        let u3 = longer.farfield(3.0, th, xh).unwrap();
        assert!((u1 - u3).norm() < 1e-12 * u1.norm());
    }

    #[test]
    fn low_frequency_limit_matches_point_scatterer() {
        // Small-sphere limit: u^∞ → (κ²a³/3)[(k₀/k₁ − 1) + 3(ρ₁−ρ₀)/(2ρ₁+ρ₀) cos]
        let s = SphereScatterer {
            radius: 0.01,
            rho1: 2.0,
            k1: 3.0,
            rho0: 1.0,
            k0: 1.0,
            order: None,
        };
        let (w, th) = (1.0, [0.0, 0.0, 1.0]);
        for (xh, cos) in [([0.0, 0.0, -1.0], -1.0), ([1.0, 0.0, 0.0], 0.0)] {
            let u = s.farfield(w, th, xh).unwrap();
            let mono = 1.0 / 3.0 - 1.0;
            let dip = 3.0 * (2.0 - 1.0) / (2.0 * 2.0 + 1.0) * cos;
            let want = 1e-6 / 3.0 * (mono + dip);
            assert!((u.re - want).abs() < 1e-3 * want.abs(), "{u} vs {want}");
        }
    }

    #[test]
    fn static_double_layer_of_one() {
        let mesh = ShapeMesh::icosphere(2).without_chart().scaled(0.3);
        let ones = vec![C64::new(1.0, 0.0); mesh.len()];
        let k = layer_apply(&mesh, 2.0, 1.0, 0.0, LayerKind::Double, &ones).unwrap();
        for v in &k {
            assert!((v.re + 1.0).abs() < 1e-10 && v.im.abs() < 1e-12);
        }
        let ks = layer_apply(&mesh, 2.0, 1.0, 0.0, LayerKind::DoubleAdjoint, &ones).unwrap();
        let total: C64 = ks.iter().zip(mesh.areas()).map(|(v, a)| v * a).sum();
        let area: f64 = mesh.areas().iter().sum();
        assert!((total.re / area + 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_layer_of_one_on_sphere() {
        // S⁰[1] = ρ₀ a on the sphere of radius a.
        let mesh = ShapeMesh::icosphere(3).without_chart().scaled(0.5);
        let ones = vec![C64::new(1.0, 0.0); mesh.len()];
        let s = layer_apply(&mesh, 1.5, 1.0, 0.0, LayerKind::Single, &ones).unwrap();
        let mean = s.iter().map(|v| v.re).sum::<f64>() / s.len() as f64;
        assert!((mean / 0.75 - 1.0).abs() < 1e-2, "{mean}");
    }

    #[test]
    fn remainders_match_series() {
        let k = 1.7;
        for r in [1e-6, 1e-3, 0.3] {
            let f = |r: f64| (C64::from_polar(1.0, k * r) - 1.0) / r;
            if r > 1e-4 {
                assert!((helmholtz_remainder(k, r) - f(r)).norm() < 1e-10);
            }
            let dr = (helmholtz_remainder(k, r + 1e-7) - helmholtz_remainder(k, r - 1e-7)) / 2e-7;
            assert!((helmholtz_remainder_dr(k, r) - dr).norm() < 1e-5, "{r}");
        }
    }
}
