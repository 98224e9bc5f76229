//! Background fields: plane-wave response `v`, far fields, and the Green's
//! function of the heterogeneous medium.
//!
//! With `L = ∇·(ρ₀⁻¹∇) + ω²/k₀`, multiplying by `ρ₀` gives
//! `Δu + κ̄²u = −(κ₀² − κ̄²)u + ∇ln ρ₀·∇u` away from sources, so the
//! scattered part `s` of any field solves
//! `s = Φ * [Q(u_inc + s)]`, `Q u = (κ₀² − κ̄²)u − ∇ln ρ₀·∇u`,
//! with `Φ(r) = e^{iκ̄r}/(4πr)`.

use crate::error::{Error, Result};
use crate::media::{BackgroundMedium, Grid3};
use crate::numerics::conv::Convolution3;
use crate::numerics::gmres::{gmres, GmresParams};
use crate::numerics::quad::cube_inverse_distance;
use crate::numerics::vec3::{dist, dot, norm, scale, sub};
use crate::{Vec3, C64};
use rayon::prelude::*;
use std::f64::consts::PI;

/// `ρ̄₀ e^{iκ₀|x−z|}/(4π|x−z|)`, `κ₀ = ω√(ρ̄₀/k̄₀)`.
pub fn green_homogeneous(rho: f64, k: f64, omega: f64, x: Vec3, z: Vec3) -> Result<C64> {
    let r = dist(x, z);
    if r == 0.0 {
        return Err(Error::Domain("Green's function evaluated at its source".into()));
    }
    let kappa = omega * (rho / k).sqrt();
    Ok(C64::from_polar(rho / (4.0 * PI * r), kappa * r))
}

/// Cell average of `Φ` over the cube of side `h` centred on the source.
pub fn self_cell_average(kappa: f64, h: f64) -> C64 {
    C64::new(cube_inverse_distance() / (4.0 * PI * h), kappa / (4.0 * PI))
}

/// Complex field on the medium grid.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub grid: Grid3,
    pub values: Vec<C64>,
    pub omega: f64,
    /// Incident direction for plane-wave solves.
    pub theta: Option<Vec3>,
    /// Source point for Green's function solves.
    pub source: Option<Vec3>,
    pub iterations: usize,
    pub residual: f64,
}

impl FieldGrid {
    /// Trilinear sample; `None` outside the grid.
    pub fn sample(&self, x: Vec3) -> Option<C64> {
        self.grid.interpolate(&self.values, x)
    }

    pub fn at_node(&self, idx: usize) -> C64 {
        self.values[idx]
    }
}

/// Far-field pattern `x̂ ↦ lim |x| e^{−iκ̄|x|} u(x)` of a volume source.
#[derive(Debug, Clone)]
pub struct FarField {
    pub kappa: f64,
    /// Source points and their integrated strengths `Q u · h³`.
    sources: Vec<(Vec3, C64)>,
    /// Point source of strength `a` at `z`, for Green's functions.
    point: Option<(Vec3, f64)>,
}

impl FarField {
    pub fn zero(kappa: f64) -> FarField {
        FarField {
            kappa,
            sources: Vec::new(),
            point: None,
        }
    }

    pub fn eval(&self, xhat: Vec3) -> C64 {
        let n = norm(xhat);
        let xh = scale(xhat, 1.0 / n);
        let mut acc = C64::new(0.0, 0.0);
        for (y, q) in &self.sources {
            acc += q * C64::from_polar(1.0, -self.kappa * dot(xh, *y));
        }
        if let Some((z, a)) = self.point {
            acc += C64::from_polar(a, -self.kappa * dot(xh, z));
        }
        acc / (4.0 * PI)
    }

    pub fn is_zero(&self) -> bool {
        self.sources.is_empty() && self.point.is_none()
    }
}

/// Lippmann–Schwinger operator of one medium at one frequency.
pub struct LsSolver<'a> {
    medium: &'a BackgroundMedium,
    omega: f64,
    kappa: f64,
    /// `κ₀² − κ̄²` per node.
    dk2: Vec<f64>,
    /// `∇ln ρ₀` per node (zero on the boundary layer).
    glr: Vec<[f64; 3]>,
    active: Vec<usize>,
    conv: Option<Convolution3>,
    pub params: GmresParams,
}

impl<'a> LsSolver<'a> {
    pub fn new(medium: &'a BackgroundMedium, omega: f64) -> Result<LsSolver<'a>> {
        if !(omega > 0.0) {
            return Err(Error::Domain(format!("frequency must be positive, got {omega}")));
        }
        let g = *medium.grid();
        let kappa = medium.exterior_kappa(omega);
        let k2 = kappa * kappa;
        let rho = medium.rho0();
        let kk = medium.k0();
        let dk2: Vec<f64> = (0..g.len()).map(|p| omega * omega * rho[p] / kk[p] - k2).collect();
        let h = g.h;
        let glr: Vec<[f64; 3]> = (0..g.len())
            .map(|p| {
                let [i, j, k] = g.ijk(p);
                if i == 0 || j == 0 || k == 0 || i + 1 == g.dims[0] || j + 1 == g.dims[1] || k + 1 == g.dims[2] {
                    return [0.0; 3];
                }
                let d = |a: usize, b: usize| (rho[a] / rho[b]).ln() / (2.0 * h);
                [
                    d(g.index(i + 1, j, k), g.index(i - 1, j, k)),
                    d(g.index(i, j + 1, k), g.index(i, j - 1, k)),
                    d(g.index(i, j, k + 1), g.index(i, j, k - 1)),
                ]
            })
            .collect();
        let active: Vec<usize> = (0..g.len())
            .filter(|&p| dk2[p].abs() > 1e-14 * k2 || glr[p].iter().any(|&c| c != 0.0))
            .collect();
        let conv = if active.is_empty() {
            None
        } else {
            let h3 = h * h * h;
            let self_term = self_cell_average(kappa, h) * h3;
            Some(Convolution3::new(g.dims, |a, b, c| {
                if a == 0 && b == 0 && c == 0 {
                    self_term
                } else {
                    let r = h * ((a * a + b * b + c * c) as f64).sqrt();
                    C64::from_polar(h3 / (4.0 * PI * r), kappa * r)
                }
            }))
        };
        Ok(LsSolver {
            medium,
            omega,
            kappa,
            dk2,
            glr,
            active,
            conv,
            params: GmresParams::default(),
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn is_homogeneous(&self) -> bool {
        self.active.is_empty()
    }

    fn grid(&self) -> &Grid3 {
        self.medium.grid()
    }

    /// `Q s` with centred differences; zero off the active set.
    fn contrast_apply(&self, s: &[C64], out: &mut [C64]) {
        let g = self.grid();
        let h2 = 2.0 * g.h;
        let vals: Vec<(usize, C64)> = self
            .active
            .par_iter()
            .map(|&p| {
                let mut q = s[p] * self.dk2[p];
                let gl = self.glr[p];
                if gl != [0.0; 3] {
                    let [i, j, k] = g.ijk(p);
                    let dx = (s[g.index(i + 1, j, k)] - s[g.index(i - 1, j, k)]) / h2;
                    let dy = (s[g.index(i, j + 1, k)] - s[g.index(i, j - 1, k)]) / h2;
                    let dz = (s[g.index(i, j, k + 1)] - s[g.index(i, j, k - 1)]) / h2;
                    q -= dx * gl[0] + dy * gl[1] + dz * gl[2];
                }
                (p, q)
            })
            .collect();
        out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for (p, q) in vals {
            out[p] = q;
        }
    }

    /// Solve for the scattered field given `Q u_inc` (with exact derivatives).
    fn solve_scattered(&self, q_inc: &[C64]) -> Result<(Vec<C64>, usize, f64)> {
        let conv = self.conv.as_ref().expect("heterogeneous solve");
        let n = q_inc.len();
        let mut rhs = vec![C64::new(0.0, 0.0); n];
        conv.apply(q_inc, &mut rhs);
        let apply = |x: &[C64], out: &mut [C64]| {
            let mut q = vec![C64::new(0.0, 0.0); n];
            self.contrast_apply(x, &mut q);
            conv.apply(&q, out);
            for (o, xi) in out.iter_mut().zip(x) {
                *o = xi - *o;
            }
        };
        let r = gmres(apply, &rhs, None, self.params)?;
        Ok((r.x, r.iterations, r.residual))
    }

    fn far_field_of(&self, total: &[C64], grad_inc: impl Fn(usize) -> [C64; 3], inc: &[C64]) -> Vec<(Vec3, C64)> {
        // Q applied to the total field: the incident part uses exact
        // gradients, the scattered part centred differences.
        let g = self.grid();
        let n = total.len();
        let scat: Vec<C64> = total.iter().zip(inc).map(|(t, i)| t - i).collect();
        let mut qs = vec![C64::new(0.0, 0.0); n];
        self.contrast_apply(&scat, &mut qs);
        let h3 = g.h.powi(3);
        self.active
            .iter()
            .map(|&p| {
                let gi = grad_inc(p);
                let gl = self.glr[p];
                let qi = inc[p] * self.dk2[p] - (gi[0] * gl[0] + gi[1] * gl[1] + gi[2] * gl[2]);
                (g.node_at(p), (qi + qs[p]) * h3)
            })
            .collect()
    }

    fn q_exact(&self, inc: &[C64], grad_inc: &(impl Fn(usize) -> [C64; 3] + Sync)) -> Vec<C64> {
        let n = inc.len();
        let vals: Vec<(usize, C64)> = self
            .active
            .par_iter()
            .map(|&p| {
                let gi = grad_inc(p);
                let gl = self.glr[p];
                (p, inc[p] * self.dk2[p] - (gi[0] * gl[0] + gi[1] * gl[1] + gi[2] * gl[2]))
            })
            .collect();
        let mut q = vec![C64::new(0.0, 0.0); n];
        for (p, v) in vals {
            q[p] = v;
        }
        q
    }

    /// Total field for the plane wave `e^{iκ̄θ·x}` and its far field.
    pub fn plane_wave(&self, theta: Vec3) -> Result<(FieldGrid, FarField)> {
        let th = scale(theta, 1.0 / norm(theta));
        let g = *self.grid();
        let inc: Vec<C64> = (0..g.len()).map(|p| plane_wave(self.kappa, th, g.node_at(p))).collect();
        if self.is_homogeneous() {
            return Ok((
                FieldGrid {
                    grid: g,
                    values: inc,
                    omega: self.omega,
                    theta: Some(th),
                    source: None,
                    iterations: 0,
                    residual: 0.0,
                },
                FarField::zero(self.kappa),
            ));
        }
        let ik = C64::new(0.0, self.kappa);
        let grad = |p: usize| -> [C64; 3] {
            let f = ik * inc[p];
            [f * th[0], f * th[1], f * th[2]]
        };
        let q = self.q_exact(&inc, &grad);
        let (s, iterations, residual) = self.solve_scattered(&q)?;
        let total: Vec<C64> = inc.iter().zip(&s).map(|(a, b)| a + b).collect();
        let sources = self.far_field_of(&total, grad, &inc);
        Ok((
            FieldGrid {
                grid: g,
                values: total,
                omega: self.omega,
                theta: Some(th),
                source: None,
                iterations,
                residual,
            },
            FarField {
                kappa: self.kappa,
                sources,
                point: None,
            },
        ))
    }

    /// Single-scattering far field of the plane wave.
    pub fn born_far_field(&self, theta: Vec3) -> FarField {
        let th = scale(theta, 1.0 / norm(theta));
        let g = *self.grid();
        let inc: Vec<C64> = (0..g.len()).map(|p| plane_wave(self.kappa, th, g.node_at(p))).collect();
        let ik = C64::new(0.0, self.kappa);
        let grad = |p: usize| -> [C64; 3] {
            let f = ik * inc[p];
            [f * th[0], f * th[1], f * th[2]]
        };
        let q = self.q_exact(&inc, &grad);
        let h3 = g.h.powi(3);
        FarField {
            kappa: self.kappa,
            sources: self.active.iter().map(|&p| (g.node_at(p), q[p] * h3)).collect(),
            point: None,
        }
    }

    /// Green's function `G(·, z)` and its far field.
    pub fn point_source(&self, z: Vec3) -> Result<(FieldGrid, FarField)> {
        let g = *self.grid();
        if !g.contains_interior(z, 1.0) {
            return Err(Error::Domain(format!("source {z:?} is not strictly inside the grid")));
        }
        let (rho_z, _) = self.medium.sample(z)?;
        let kappa = self.kappa;
        let near = 1e-9 * g.h;
        let inc: Vec<C64> = (0..g.len())
            .map(|p| {
                let r = dist(g.node_at(p), z);
                if r < near {
                    self_cell_average(kappa, g.h) * rho_z
                } else {
                    C64::from_polar(rho_z / (4.0 * PI * r), kappa * r)
                }
            })
            .collect();
        let field = |values: Vec<C64>, iterations: usize, residual: f64| FieldGrid {
            grid: g,
            values,
            omega: self.omega,
            theta: None,
            source: Some(z),
            iterations,
            residual,
        };
        let point = Some((z, rho_z));
        if self.is_homogeneous() {
            return Ok((
                field(inc, 0, 0.0),
                FarField {
                    kappa,
                    sources: Vec::new(),
                    point,
                },
            ));
        }
        // ∇(ρ₀(z)Φ(x − z)); zero at the source by symmetry of the cell average.
        let grad = |p: usize| -> [C64; 3] {
            let d = sub(g.node_at(p), z);
            let r = norm(d);
            if r < near {
                return [C64::new(0.0, 0.0); 3];
            }
            let f = C64::from_polar(rho_z / (4.0 * PI * r), kappa * r) * C64::new(-1.0 / r, kappa) / r;
            [f * d[0], f * d[1], f * d[2]]
        };
        let q = self.q_exact(&inc, &grad);
        let (s, iterations, residual) = self.solve_scattered(&q)?;
        let total: Vec<C64> = inc.iter().zip(&s).map(|(a, b)| a + b).collect();
        let sources = self.far_field_of(&total, grad, &inc);
        Ok((field(total, iterations, residual), FarField { kappa, sources, point }))
    }
}

pub fn plane_wave(kappa: f64, theta: Vec3, x: Vec3) -> C64 {
    C64::from_polar(1.0, kappa * dot(theta, x))
}

/// Background total field for incidence `θ` and its far field.
pub fn solve_background(medium: &BackgroundMedium, theta: Vec3, omega: f64) -> Result<(FieldGrid, FarField)> {
    LsSolver::new(medium, omega)?.plane_wave(theta)
}

/// Green's function of the background with source `z`.
pub fn green_heterogeneous(medium: &BackgroundMedium, omega: f64, z: Vec3) -> Result<(FieldGrid, FarField)> {
    LsSolver::new(medium, omega)?.point_source(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::GaussianBump;

    fn bump_medium(h: f64, drho: f64, dk: f64) -> BackgroundMedium {
        let g = Grid3::from_box([-1.0; 3], [1.0; 3], h).unwrap();
        let b = GaussianBump {
            center: [0.0; 3],
            width: 0.15,
            delta_rho: drho,
            delta_k: dk,
        };
        BackgroundMedium::from_phantoms(g, 1.0, 1.0, &[b]).unwrap()
    }

    #[test]
    fn static_kernel_and_singularity() {
        let v = green_homogeneous(1.0, 1.0, 0.0, [1.0, 0.0, 0.0], [0.0; 3]).unwrap();
        assert!((v.re - 1.0 / (4.0 * PI)).abs() < 1e-16 && v.im == 0.0);
        assert!(green_homogeneous(1.0, 1.0, 1.0, [0.0; 3], [0.0; 3]).is_err());
    }

    #[test]
    fn radiation_limit() {
        let (rho, k, w): (f64, f64, f64) = (2.0, 3.0, 1.7);
        let kappa = w * (rho / k).sqrt();
        let z = [0.2, -0.1, 0.3];
        let xh = [0.0, 0.6, 0.8];
        let mut last = f64::INFINITY;
        for r in [1e2, 1e3, 1e4] {
            let x = scale(xh, r);
            let gv = green_homogeneous(rho, k, w, x, z).unwrap();
            let lim = gv * r * C64::from_polar(1.0, -kappa * r);
            // Far field of a shifted source carries the phase e^{−iκ x̂·z}.
            let dev = (lim - C64::from_polar(rho / (4.0 * PI), -kappa * dot(xh, z))).norm();
            assert!(dev < last && dev < 2.0 / r);
            last = dev;
        }
    }

    #[test]
    fn helmholtz_stencil_residual_is_second_order() {
        let (rho, k, w) = (1.0, 1.0, 2.0);
        let kappa = w;
        let x0 = [0.7, 0.2, -0.3];
        let res = |h: f64| {
            let gv = |d: Vec3| green_homogeneous(rho, k, w, crate::numerics::vec3::add(x0, d), [0.0; 3]).unwrap();
            let c = gv([0.0; 3]);
            let mut lap = c * -6.0;
            for e in [[h, 0.0, 0.0], [-h, 0.0, 0.0], [0.0, h, 0.0], [0.0, -h, 0.0], [0.0, 0.0, h], [0.0, 0.0, -h]] {
                lap += gv(e);
            }
            (lap / (h * h) + c * kappa * kappa).norm()
        };
        let r1 = res(0.02);
        let r2 = res(0.01);
        assert!(r1 / r2 > 3.5 && r1 / r2 < 4.5, "{r1} {r2}");
    }

    #[test]
    fn homogeneous_short_circuit() {
        let g = Grid3::from_box([-1.0; 3], [1.0; 3], 0.25).unwrap();
        let m = BackgroundMedium::homogeneous(g, 1.0, 4.0);
        let th = [0.0, 0.0, 1.0];
        let (v, ff) = solve_background(&m, th, 3.0).unwrap();
        for p in 0..g.len() {
            assert_eq!(v.values[p], plane_wave(1.5, th, g.node_at(p)));
        }
        assert!(ff.is_zero() && ff.eval([1.0, 0.0, 0.0]) == C64::new(0.0, 0.0));
        let z = [0.25, 0.0, -0.25];
        let (gz, _) = green_heterogeneous(&m, 3.0, z).unwrap();
        for p in [0, 7, 100, g.index(4, 4, 4)] {
            let x = g.node_at(p);
            let e = green_homogeneous(1.0, 4.0, 3.0, x, z).unwrap();
            assert!((gz.values[p] - e).norm() <= 1e-8 * e.norm());
        }
    }

    #[test]
    fn weak_contrast_matches_born() {
        let m = bump_medium(0.0625, 0.0, -0.01);
        let s = LsSolver::new(&m, 4.0).unwrap();
        let th = [0.0, 0.0, 1.0];
        let (_, ff) = s.plane_wave(th).unwrap();
        let born = s.born_far_field(th);
        for xh in [[0.0, 0.0, -1.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]] {
            let a = ff.eval(xh);
            let b = born.eval(xh);
            assert!((a - b).norm() <= 0.05 * b.norm(), "{a} {b}");
        }
    }

    #[test]
    fn plane_wave_reciprocity() {
        let m = bump_medium(0.0625, 0.0, 0.1);
        let s = LsSolver::new(&m, 5.0).unwrap();
        let th = crate::numerics::vec3::normalize([0.3, -0.2, 1.0]);
        let xh = crate::numerics::vec3::normalize([1.0, 0.5, 0.1]);
        let (_, f1) = s.plane_wave(th).unwrap();
        let (_, f2) = s.plane_wave(scale(xh, -1.0)).unwrap();
        let a = f1.eval(xh);
        let b = f2.eval(scale(th, -1.0));
        assert!((a - b).norm() <= 1e-6 * a.norm(), "{a} {b}");
    }

    #[test]
    fn mixed_reciprocity_and_source_symmetry() {
        let m = bump_medium(0.0625, 0.1, 0.1);
        let s = LsSolver::new(&m, 5.0).unwrap();
        let z = [0.125, -0.0625, 0.0];
        let xh = crate::numerics::vec3::normalize([0.2, 1.0, -0.4]);
        let (gz, gf) = s.point_source(z).unwrap();
        let (v, _) = s.plane_wave(scale(xh, -1.0)).unwrap();
        let g = m.grid();
        let iz = g.node_index_of(z, 1e-9).unwrap();
        let lhs = gf.eval(xh);
        let rhs = v.values[iz] / (4.0 * PI);
        assert!((lhs - rhs).norm() <= 0.01 * rhs.norm(), "{lhs} {rhs}");
        let y = [-0.125, 0.125, 0.0625];
        let iy = g.node_index_of(y, 1e-9).unwrap();
        let (gy, _) = s.point_source(y).unwrap();
        let (a, b) = (gz.values[iy], gy.values[iz]);
        assert!((a - b).norm() <= 0.01 * a.norm(), "{a} {b}");
    }
}
