//! Newtonian potential on the reference shape: discretization, spectrum,
//! body-wave resonances and the W-field.

use crate::error::{Error, Result};
use crate::geometry::Voxelization;
use crate::media::{BubbleSpec, Regime};
use crate::numerics::conv::Convolution3;
use crate::numerics::eigen::{dense_symmetric, subspace_iteration, EigenPairs};
use crate::numerics::quad::cube_inverse_distance;
use crate::numerics::vec3::dist;
use crate::C64;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Relative gap below which neighbouring eigenvalues form one cluster.
pub const CLUSTER_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct AssembleOptions {
    /// Memory guard on the voxel count.
    pub cap: usize,
    /// Largest voxel count stored as a dense matrix.
    pub dense_limit: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            cap: 20_000,
            dense_limit: 1_500,
        }
    }
}

enum Operator {
    Dense(DMatrix<f64>),
    Fft { conv: Convolution3, slot: Vec<usize> },
}

/// `N⁰` on voxels in the symmetric form `S = D^{1/2} A D^{-1/2}`, where
/// `D = diag(w h³)` and `A` acts on cell values.
pub struct NewtonianDisc {
    vox: Voxelization,
    sqrt_w: Vec<f64>,
    op: Operator,
}

fn gamma0(r: f64) -> f64 {
    1.0 / (4.0 * PI * r)
}

/// `∫_cube 1/(4π|x−y|) dy` at the cube centre, divided by `h²`.
pub fn self_cell_constant() -> f64 {
    cube_inverse_distance() / (4.0 * PI)
}

pub fn assemble_newtonian(vox: &Voxelization) -> Result<NewtonianDisc> {
    assemble_newtonian_with(vox, AssembleOptions::default())
}

pub fn assemble_newtonian_with(vox: &Voxelization, opts: AssembleOptions) -> Result<NewtonianDisc> {
    let n = vox.len();
    if n == 0 {
        return Err(Error::Geometry("empty voxelization".into()));
    }
    if n > opts.cap {
        return Err(Error::MemoryGuard { count: n, cap: opts.cap });
    }
    let h = vox.h;
    let h3 = h * h * h;
    let sqrt_w: Vec<f64> = vox.voxels.iter().map(|v| (v.weight * h3).sqrt()).collect();
    let diag = self_cell_constant() * h * h;
    let op = if n <= opts.dense_limit {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|p| {
                (0..n)
                    .map(|q| {
                        if p == q {
                            vox.voxels[p].weight * diag
                        } else {
                            sqrt_w[p] * gamma0(dist(vox.voxels[p].center, vox.voxels[q].center)) * sqrt_w[q]
                        }
                    })
                    .collect()
            })
            .collect();
        let mut a = DMatrix::from_fn(n, n, |p, q| rows[p][q]);
        // Exact symmetry.
        for p in 0..n {
            for q in 0..p {
                let m = 0.5 * (a[(p, q)] + a[(q, p)]);
                a[(p, q)] = m;
                a[(q, p)] = m;
            }
        }
        Operator::Dense(a)
    } else {
        let (lo, dims) = vox.lattice();
        let slot = vox
            .voxels
            .iter()
            .map(|v| {
                let i = (v.ijk[0] - lo[0]) as usize;
                let j = (v.ijk[1] - lo[1]) as usize;
                let k = (v.ijk[2] - lo[2]) as usize;
                (i * dims[1] + j) * dims[2] + k
            })
            .collect();
        let c0 = self_cell_constant() / h;
        let conv = Convolution3::new(dims, |a, b, c| {
            if a == 0 && b == 0 && c == 0 {
                C64::new(c0, 0.0)
            } else {
                let r = h * ((a * a + b * b + c * c) as f64).sqrt();
                C64::new(gamma0(r), 0.0)
            }
        });
        Operator::Fft { conv, slot }
    };
    Ok(NewtonianDisc { vox: vox.clone(), sqrt_w, op })
}

impl NewtonianDisc {
    pub fn len(&self) -> usize {
        self.sqrt_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sqrt_w.is_empty()
    }

    pub fn voxelization(&self) -> &Voxelization {
        &self.vox
    }

    /// `√(w_p h³)` per voxel.
    pub fn sqrt_weights(&self) -> &[f64] {
        &self.sqrt_w
    }

    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.op {
            Operator::Dense(a) => Some(a),
            Operator::Fft { .. } => None,
        }
    }

    /// `out = S s`.
    pub fn apply_sym(&self, s: &[f64], out: &mut [f64]) {
        match &self.op {
            Operator::Dense(a) => {
                let v = a * DVector::from_column_slice(s);
                out.copy_from_slice(v.as_slice());
            }
            Operator::Fft { conv, slot } => {
                let mut x = vec![C64::new(0.0, 0.0); conv.len()];
                for (p, &i) in slot.iter().enumerate() {
                    x[i] = C64::new(self.sqrt_w[p] * s[p], 0.0);
                }
                let mut y = vec![C64::new(0.0, 0.0); conv.len()];
                conv.apply(&x, &mut y);
                for (p, &i) in slot.iter().enumerate() {
                    out[p] = self.sqrt_w[p] * y[i].re;
                }
            }
        }
    }

    /// Newtonian potential of the cell values `u`, evaluated at the cells.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let s: Vec<f64> = u.iter().zip(&self.sqrt_w).map(|(u, w)| u * w).collect();
        let mut out = vec![0.0; s.len()];
        self.apply_sym(&s, &mut out);
        out.iter().zip(&self.sqrt_w).map(|(v, w)| v / w).collect()
    }

    /// `∫ u` for cell values `u`.
    pub fn integrate(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.sqrt_w).map(|(u, w)| u * w * w).sum()
    }
}

/// Eigenvalues within `CLUSTER_TOL` of each other and their eigenfunctions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenCluster {
    /// Mean of the member eigenvalues.
    pub lambda: f64,
    pub members: Vec<f64>,
    /// Cell values of volume-orthonormal eigenfunctions.
    #[serde(skip)]
    pub functions: Vec<Vec<f64>>,
    /// `Σ_l (∫_B e_l)²`.
    pub moment_sq: f64,
}

impl EigenCluster {
    pub fn multiplicity(&self) -> usize {
        self.members.len()
    }
}

/// Group descending eigenvalues at relative gap below `CLUSTER_TOL`.
pub fn cluster_indices(values: &[f64]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(c) if (values[*c.last().unwrap()] - v).abs() < CLUSTER_TOL * v.abs().max(values[c[0]].abs()) => c.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

fn clusters_from(disc: &NewtonianDisc, pairs: &EigenPairs, count: usize) -> Vec<EigenCluster> {
    let groups = cluster_indices(&pairs.values);
    groups
        .into_iter()
        .filter(|g| g[0] < count)
        .map(|g| {
            let mut functions = Vec::new();
            let mut moment_sq = 0.0;
            for &i in &g {
                let s = pairs.vectors.column(i);
                let m: f64 = s.iter().zip(&disc.sqrt_w).map(|(s, w)| s * w).sum();
                moment_sq += m * m;
                functions.push(s.iter().zip(&disc.sqrt_w).map(|(s, w)| s / w).collect());
            }
            let members: Vec<f64> = g.iter().map(|&i| pairs.values[i]).collect();
            EigenCluster {
                lambda: members.iter().sum::<f64>() / members.len() as f64,
                members,
                functions,
                moment_sq,
            }
        })
        .collect()
}

/// Leading eigenpairs: dense for small systems, otherwise FFT-applied block
/// subspace iteration.
pub fn leading_pairs(disc: &NewtonianDisc, count: usize) -> Result<EigenPairs> {
    let n = disc.len();
    if count == 0 || count > n {
        return Err(Error::Precondition(format!("eigenpair count {count} outside 1..={n}")));
    }
    let pairs = match &disc.op {
        Operator::Dense(a) => {
            let mut all = dense_symmetric(a);
            let keep = (count + 8).min(n);
            all.values.truncate(keep);
            all.residuals.truncate(keep);
            all.vectors = all.vectors.columns(0, keep).into_owned();
            all
        }
        Operator::Fft { .. } => {
            let want = (count + 8).min(n);
            subspace_iteration(n, want, 8, |s, o| disc.apply_sym(s, o), 1e-9, 2000, 0x5eed)?
        }
    };
    if let Some(bad) = pairs.values.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Numerical(format!("non-positive Ritz value {bad:.3e}")));
    }
    let worst = pairs.residuals.iter().take(count).cloned().fold(0.0, f64::max);
    if !(worst < 1e-6) {
        return Err(Error::Numerical(format!("eigenpair residual {worst:.3e} too large")));
    }
    Ok(pairs)
}

/// Clusters containing the `count` largest eigenvalues, descending.
pub fn newtonian_eigens(disc: &NewtonianDisc, count: usize) -> Result<Vec<EigenCluster>> {
    let pairs = leading_pairs(disc, count)?;
    Ok(clusters_from(disc, &pairs, count))
}

/// One Richardson step for a quantity with error `O(h^order)` on grids `h` and `h/ratio`.
pub fn richardson(coarse: f64, fine: f64, ratio: f64, order: f64) -> f64 {
    let f = ratio.powf(order);
    fine + (fine - coarse) / (f - 1.0)
}

/// Observed convergence order from three grids with a constant ratio.
pub fn observed_order(coarse: f64, mid: f64, fine: f64, ratio: f64) -> f64 {
    ((coarse - mid) / (mid - fine)).abs().ln() / ratio.ln()
}

/// `ω_{n₀} = √(k̄₁ / (ρ̄₁ λ))`.
pub fn body_resonance(bubble: &BubbleSpec, lambda: f64) -> Result<f64> {
    if bubble.regime != Regime::BodyWave {
        return Err(Error::Precondition("body_resonance needs a body-wave bubble".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Numerical(format!("eigenvalue {lambda} is not positive")));
    }
    Ok((bubble.k_bar / (bubble.rho_bar * lambda)).sqrt())
}

/// Solution of `(I − γω²N⁰_D) W = 1` on `D = εB`.
#[derive(Debug, Clone)]
pub struct WField {
    /// Cell values on the reference voxels.
    pub w: Vec<f64>,
    /// `∫_D W` from the direct solve.
    pub integral: f64,
    /// `Σ_n (∫_D e_n)² / (1 − γω²λ^D_n)`.
    pub spectral_integral: f64,
    /// Pole `ω²` nearest to the requested frequency.
    pub nearest_pole: f64,
}

/// Dense matrix and full spectrum, reused across frequencies.
pub struct WSolver {
    s: DMatrix<f64>,
    d: DVector<f64>,
    values: Vec<f64>,
    moments: Vec<f64>,
}

impl WSolver {
    pub fn new(disc: &NewtonianDisc) -> Result<WSolver> {
        let s = disc
            .matrix()
            .ok_or_else(|| Error::Precondition(format!("W-field needs a dense discretization; {} voxels is too many", disc.len())))?
            .clone();
        let d = DVector::from_column_slice(&disc.sqrt_w);
        let pairs = dense_symmetric(&s);
        let moments = (0..pairs.values.len()).map(|i| pairs.vectors.column(i).dot(&d)).collect();
        Ok(WSolver {
            s,
            d,
            values: pairs.values,
            moments,
        })
    }

    /// Eigenvalues of `N⁰_B`, descending, with `(∫_B e_n)`.
    pub fn spectrum(&self) -> (&[f64], &[f64]) {
        (&self.values, &self.moments)
    }

    /// Poles in `ω²`: `1/(γ ε² λ_n)` for `γλ_n > 0`.
    pub fn poles(&self, gamma: f64, eps: f64) -> Vec<f64> {
        self.values
            .iter()
            .filter(|&&l| gamma * l > 0.0)
            .map(|&l| 1.0 / (gamma * eps * eps * l))
            .collect()
    }

    pub fn solve(&self, gamma: f64, omega: f64, eps: f64) -> Result<WField> {
        let w2 = omega * omega;
        let nearest_pole = self
            .poles(gamma, eps)
            .into_iter()
            .min_by(|a, b| ((a - w2).abs() / a).total_cmp(&((b - w2).abs() / b)))
            .unwrap_or(f64::INFINITY);
        if (w2 - nearest_pole).abs() <= 1e-9 * nearest_pole {
            return Err(Error::Pole { omega2: w2, pole: nearest_pole });
        }
        let t = gamma * w2 * eps * eps;
        let n = self.d.len();
        let m = DMatrix::identity(n, n) - &self.s * t;
        let lu = m.lu();
        let x = lu
            .solve(&self.d)
            .ok_or(Error::Singular { rcond: 0.0 })?;
        let e3 = eps * eps * eps;
        let integral = e3 * x.dot(&self.d);
        let spectral_integral = e3
            * self
                .values
                .iter()
                .zip(&self.moments)
                .map(|(l, m)| m * m / (1.0 - t * l))
                .sum::<f64>();
        let w = x.iter().zip(self.d.iter()).map(|(x, d)| x / d).collect();
        Ok(WField {
            w,
            integral,
            spectral_integral,
            nearest_pole,
        })
    }
}

pub fn w_field(disc: &NewtonianDisc, gamma: f64, omega: f64, eps: f64) -> Result<WField> {
    WSolver::new(disc)?.solve(gamma, omega, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{voxelize, Shape, Voxel};
    use crate::numerics::eigen::orthonormalize;
    use rand::{Rng, SeedableRng};

    fn ball(h: f64) -> NewtonianDisc {
        assemble_newtonian(&voxelize(&Shape::Ball, h).unwrap()).unwrap()
    }

    #[test]
    fn distant_cells_follow_midpoint_rule() {
        let h = 0.1;
        let d = 2.0;
        let vox = Voxelization {
            h,
            voxels: vec![
                Voxel { ijk: [0, 0, 0], center: [0.05, 0.05, 0.05], weight: 1.0 },
                Voxel { ijk: [20, 0, 0], center: [2.05, 0.05, 0.05], weight: 1.0 },
            ],
        };
        let disc = assemble_newtonian(&vox).unwrap();
        let a = disc.matrix().unwrap();
        // Exact cell integral by a smooth tensor rule.
        let (x, w) = crate::numerics::quad::gauss_legendre(8);
        let mut exact = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                for k in 0..8 {
                    let y = [2.0 + x[i] * h, x[j] * h, x[k] * h];
                    exact += w[i] * w[j] * w[k] * h * h * h * gamma0(dist([0.05; 3], y));
                }
            }
        }
        assert!((a[(0, 1)] - exact).abs() / exact <= (h / d).powi(2));
        assert!(a[(0, 0)] > 0.0);
    }

    #[test]
    fn dense_and_fft_operators_agree() {
        let vox = voxelize(&Shape::Ball, 0.25).unwrap();
        let dense = assemble_newtonian(&vox).unwrap();
        let fft = assemble_newtonian_with(&vox, AssembleOptions { cap: 20_000, dense_limit: 0 }).unwrap();
        let s: Vec<f64> = (0..vox.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut a = vec![0.0; s.len()];
        let mut b = vec![0.0; s.len()];
        dense.apply_sym(&s, &mut a);
        fft.apply_sym(&s, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
        let m = dense.matrix().unwrap();
        assert!((m - m.transpose()).amax() <= 1e-12 * m.amax());
    }

    #[test]
    fn potential_of_one_at_the_centre() {
        let disc = ball(1.0 / 16.0);
        let u = disc.apply(&vec![1.0; disc.len()]);
        let vox = disc.voxelization();
        let (p, _) = vox
            .voxels
            .iter()
            .enumerate()
            .min_by(|a, b| crate::numerics::vec3::norm(a.1.center).total_cmp(&crate::numerics::vec3::norm(b.1.center)))
            .unwrap();
        assert!((u[p] - 0.5).abs() < 0.01, "{}", u[p]);
    }

    #[test]
    fn memory_guard() {
        let vox = voxelize(&Shape::Ball, 0.25).unwrap();
        let r = assemble_newtonian_with(&vox, AssembleOptions { cap: 10, dense_limit: 5 });
        assert!(matches!(r, Err(Error::MemoryGuard { .. })));
    }

    #[test]
    fn ball_leading_eigenvalue_and_scaling() {
        let vox = voxelize(&Shape::Ball, 0.2).unwrap();
        let c1 = newtonian_eigens(&assemble_newtonian(&vox).unwrap(), 4).unwrap();
        let lam = c1[0].lambda;
        assert!((lam / (4.0 / (PI * PI)) - 1.0).abs() < 0.05, "{lam}");
        // Second cluster: the threefold l = 1 multiplet.
        assert_eq!(c1[1].multiplicity(), 3);
        let half = newtonian_eigens(&assemble_newtonian(&vox.scaled(0.5)).unwrap(), 4).unwrap();
        assert!((half[0].lambda / (0.25 * lam) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn moment_is_basis_invariant() {
        let vox = voxelize(&Shape::Ball, 0.2).unwrap();
        let disc = assemble_newtonian(&vox).unwrap();
        let cl = newtonian_eigens(&disc, 4).unwrap();
        let c = &cl[1];
        let n = disc.len();
        let k = c.multiplicity();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mix = DMatrix::from_fn(k, k, |_, _| rng.gen::<f64>() - 0.5);
        let q = orthonormalize(&mix);
        let sym = DMatrix::from_fn(n, k, |p, l| c.functions[l][p] * disc.sqrt_weights()[p]);
        let rotated = sym * q;
        let m2: f64 = (0..k)
            .map(|l| rotated.column(l).iter().zip(disc.sqrt_weights()).map(|(s, w)| s * w).sum::<f64>().powi(2))
            .sum();
        assert!((m2 - c.moment_sq).abs() <= 1e-10 * c.moment_sq.max(1e-12) + 1e-14);
        // Orthonormality in the volume inner product.
        let e = &c1_functions(&cl)[0];
        let norm2: f64 = e.iter().zip(disc.sqrt_weights()).map(|(e, w)| e * e * w * w).sum();
        assert!((norm2 - 1.0).abs() < 1e-10);
    }

    fn c1_functions(cl: &[EigenCluster]) -> Vec<Vec<f64>> {
        cl[0].functions.clone()
    }

    #[test]
    fn body_resonance_values() {
        let mut b = BubbleSpec {
            shape: crate::geometry::ShapeRef::Ball,
            center: [0.0; 3],
            eps: 0.1,
            rho_bar: 1.0,
            k_bar: 1.0,
            regime: Regime::BodyWave,
            j: Some(1.0),
        };
        let w = body_resonance(&b, 4.0 / (PI * PI)).unwrap();
        assert!((w - PI / 2.0).abs() < 1e-15);
        b.k_bar = 4.0;
        assert!((body_resonance(&b, 4.0 / (PI * PI)).unwrap() - PI).abs() < 1e-15);
        assert!(body_resonance(&b, -1.0).is_err());
    }

    #[test]
    fn w_field_identity_and_static_limit() {
        let vox = voxelize(&Shape::Ball, 0.25).unwrap();
        let disc = assemble_newtonian(&vox).unwrap();
        let solver = WSolver::new(&disc).unwrap();
        let eps = 0.1;
        let w0 = solver.solve(50.0, 0.0, eps).unwrap();
        assert!(w0.w.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert!((w0.integral - vox.volume() * eps.powi(3)).abs() < 1e-14);
        let poles = solver.poles(50.0, eps);
        for f in [0.3, 0.8, 1.3, 1.9, 2.6] {
            let w = solver.solve(50.0, (f * poles[0]).sqrt(), eps).unwrap();
            assert!((w.integral - w.spectral_integral).abs() <= 1e-8 * w.integral.abs());
        }
        let at = solver.solve(50.0, poles[0].sqrt(), eps);
        assert!(matches!(at, Err(Error::Pole { .. })));
    }
}
