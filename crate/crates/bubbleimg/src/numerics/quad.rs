//! Quadrature rules and closed-form element integrals.

use super::vec3::{cross, dot, norm, normalize, scale, sub};
use crate::Vec3;

/// Symmetric triangle rule in barycentric coordinates; weights sum to one.
#[derive(Debug, Clone)]
pub struct TriRule {
    pub bary: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TriRule {
    /// Rules with 1, 3 or 7 points (exact to degree 1, 2 and 5).
    pub fn new(points: usize) -> Option<TriRule> {
        match points {
            1 => Some(TriRule {
                bary: vec![[1.0 / 3.0; 3]],
                weights: vec![1.0],
            }),
            3 => Some(TriRule {
                bary: vec![
                    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
                    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
                    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
                ],
                weights: vec![1.0 / 3.0; 3],
            }),
            7 => {
                let s15 = 15f64.sqrt();
                let a = (6.0 - s15) / 21.0;
                let b = (9.0 + 2.0 * s15) / 21.0;
                let c = (6.0 + s15) / 21.0;
                let d = (9.0 - 2.0 * s15) / 21.0;
                let w1 = (155.0 - s15) / 1200.0;
                let w2 = (155.0 + s15) / 1200.0;
                Some(TriRule {
                    bary: vec![
                        [1.0 / 3.0; 3],
                        [a, a, b],
                        [a, b, a],
                        [b, a, a],
                        [c, c, d],
                        [c, d, c],
                        [d, c, c],
                    ],
                    weights: vec![9.0 / 40.0, w1, w1, w1, w2, w2, w2],
                })
            }
            _ => None,
        }
    }

    /// Physical points of the rule on triangle `t`.
    pub fn points(&self, t: &[Vec3; 3]) -> Vec<Vec3> {
        self.bary
            .iter()
            .map(|l| {
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = l[0] * t[0][k] + l[1] * t[1][k] + l[2] * t[2][k];
                }
                p
            })
            .collect()
    }
}

/// Split a triangle into four by edge midpoints, `levels` times.
pub fn subdivide(t: &[Vec3; 3], levels: usize) -> Vec<[Vec3; 3]> {
    let mut cur = vec![*t];
    for _ in 0..levels {
        let mut next = Vec::with_capacity(cur.len() * 4);
        for [a, b, c] in cur {
            let ab = scale(super::vec3::add(a, b), 0.5);
            let bc = scale(super::vec3::add(b, c), 0.5);
            let ca = scale(super::vec3::add(c, a), 0.5);
            next.push([a, ab, ca]);
            next.push([ab, b, bc]);
            next.push([ca, bc, c]);
            next.push([ab, bc, ca]);
        }
        cur = next;
    }
    cur
}

pub fn tri_area(t: &[Vec3; 3]) -> f64 {
    0.5 * norm(cross(sub(t[1], t[0]), sub(t[2], t[0])))
}

/// Gauss–Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pair(n, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_pair(n, z);
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn legendre_pair(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
}

/// `∫ 1/|y| dy` over the unit cube centred at the origin.
///
/// Eight copies of the corner-cube box integral, each scaled by 1/4:
/// `∫_{[0,1]^3} 1/|y| = 3/2·ln(2+√3) − π/4`.
pub fn cube_inverse_distance() -> f64 {
    let corner = 1.5 * (2.0 + 3f64.sqrt()).ln() - std::f64::consts::FRAC_PI_4;
    2.0 * corner
}

/// Signed solid angle subtended by triangle `(a, b, c)` at `p`.
///
/// Positive when the oriented normal `(b−a)×(c−a)` points away from `p`.
/// Equals `∫_T (y−p)·ν/|y−p|³ dσ(y)`.
pub fn solid_angle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let r1 = sub(a, p);
    let r2 = sub(b, p);
    let r3 = sub(c, p);
    let (l1, l2, l3) = (norm(r1), norm(r2), norm(r3));
    let num = dot(r1, cross(r2, r3));
    // Coplanar points (including the panel itself) see no solid angle.
    if num.abs() <= 1e-14 * l1 * l2 * l3 {
        return 0.0;
    }
    let den = l1 * l2 * l3 + dot(r1, r2) * l3 + dot(r1, r3) * l2 + dot(r2, r3) * l1;
    2.0 * num.atan2(den)
}

/// `∫_T 1/|p−y| dσ(y)` over a flat triangle, in closed form.
pub fn tri_inverse_distance(p: Vec3, t: &[Vec3; 3]) -> f64 {
    let n = normalize(cross(sub(t[1], t[0]), sub(t[2], t[0])));
    let d = dot(sub(p, t[0]), n);
    let ad = d.abs();
    let mut total = 0.0;
    for i in 0..3 {
        let a = t[i];
        let b = t[(i + 1) % 3];
        let el = sub(b, a);
        let len = norm(el);
        let lhat = scale(el, 1.0 / len);
        let mhat = cross(lhat, n);
        let t0 = dot(sub(a, p), mhat);
        let lm = dot(sub(a, p), lhat);
        let lp = dot(sub(b, p), lhat);
        let rm = norm(sub(a, p));
        let rp = norm(sub(b, p));
        let r02 = t0 * t0 + d * d;
        if t0.abs() > 1e-300 {
            // (R+l)(R−l) = R0², so the second form avoids cancellation
            // when the edge lies behind the foot point.
            let log = if lm + lp >= 0.0 {
                ((rp + lp) / (rm + lm)).ln()
            } else {
                ((rm - lm) / (rp - lp)).ln()
            };
            total += t0 * log;
            if ad > 0.0 {
                total -= ad * ((t0 * lp / (r02 + ad * rp)).atan() - (t0 * lm / (r02 + ad * rm)).atan());
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(p: Vec3, t: &[Vec3; 3], levels: usize, f: impl Fn(Vec3) -> f64) -> f64 {
        let rule = TriRule::new(7).unwrap();
        subdivide(t, levels)
            .iter()
            .map(|s| {
                let a = tri_area(s);
                rule.points(s)
                    .iter()
                    .zip(&rule.weights)
                    .map(|(y, w)| w * a * f(*y))
                    .sum::<f64>()
            })
            .sum::<f64>()
            + 0.0 * p[0]
    }

    #[test]
    fn rules_integrate_polynomials() {
        let t = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        // ∫ x^2 y over the triangle = 2^3 * 1^2 * 2! * 1! / 6! * 2*area... use exact value 2/15
        let exact = 2.0f64.powi(3) * 2.0 * 1.0 / 120.0;
        let rule = TriRule::new(7).unwrap();
        let a = tri_area(&t);
        let s: f64 = rule
            .points(&t)
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * a * p[0] * p[0] * p[1])
            .sum();
        assert!((s - exact).abs() < 1e-14, "{s} {exact}");
        for n in [1, 3, 7] {
            let r = TriRule::new(n).unwrap();
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gauss_legendre_exactness() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(11)).sum();
        assert!((s - 1.0 / 12.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cube_constant_against_quadrature() {
        // 1/|y| over the corner cube [0,1]^3 via Duffy-style pyramids: the
        // three pyramids with apex at the origin over the far faces give
        // ∫ = 3 ∫_{[0,1]^2} ∫_0^1 t^2 / (t sqrt(1+u^2+v^2)) dt du dv.
        let (x, w) = gauss_legendre(40);
        let mut s = 0.0;
        for (u, wu) in x.iter().zip(&w) {
            for (v, wv) in x.iter().zip(&w) {
                s += wu * wv * 0.5 / (1.0 + u * u + v * v).sqrt();
            }
        }
        let corner = 3.0 * s;
        assert!((2.0 * corner - cube_inverse_distance()).abs() < 1e-12);
        assert!((cube_inverse_distance() - 2.380077).abs() < 1e-6);
    }

    #[test]
    fn solid_angle_of_closed_tetrahedron() {
        let v = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let faces = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
        let total = |p: Vec3| -> f64 {
            faces
                .iter()
                .map(|f| solid_angle(p, v[f[0]], v[f[1]], v[f[2]]))
                .sum()
        };
        let four_pi = 4.0 * std::f64::consts::PI;
        assert!((total([0.1, 0.2, 0.15]) - four_pi).abs() < 1e-12);
        assert!(total([2.0, 1.0, 1.0]).abs() < 1e-12);
        // On a face interior: half the sphere.
        assert!((total([0.3, 0.3, 0.0]) - four_pi / 2.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_distance_matches_refined_quadrature() {
        let t = [[0.0, 0.0, 0.0], [1.0, 0.1, 0.0], [0.2, 0.9, 0.3]];
        for p in [[0.3, 0.3, 1.0], [2.0, -1.0, 0.5], [0.4, 0.3, 0.05], [-0.5, 0.2, -0.2]] {
            let exact = tri_inverse_distance(p, &t);
            let q = brute(p, &t, 6, |y| 1.0 / norm(sub(y, p)));
            assert!((exact - q).abs() < 1e-6 * q.abs(), "p={p:?} {exact} {q}");
        }
    }

    #[test]
    fn inverse_distance_in_plane_and_at_centroid() {
        let t = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let c = [1.0 / 3.0, 1.0 / 3.0, 0.0];
        let exact = tri_inverse_distance(c, &t);
        // Polar integration around the centroid over the three edges.
        let (x, w) = gauss_legendre(60);
        let mut s = 0.0;
        for i in 0..3 {
            let a = sub(t[i], c);
            let b = sub(t[(i + 1) % 3], c);
            // ∫ over the sub-triangle (c, a, b) of 1/r = ∫ dθ r_edge(θ)
            let ta = a[1].atan2(a[0]);
            let mut tb = b[1].atan2(b[0]);
            if tb < ta {
                tb += 2.0 * std::f64::consts::PI;
            }
            let e = sub(b, a);
            let nrm = [e[1], -e[0], 0.0];
            let h = dot(a, nrm) / norm(nrm);
            for (xi, wi) in x.iter().zip(&w) {
                let th = ta + (tb - ta) * xi;
                let dir = [th.cos(), th.sin(), 0.0];
                let r = h / (dot(dir, nrm) / norm(nrm));
                s += wi * (tb - ta) * r;
            }
        }
        assert!((exact - s).abs() < 1e-10, "{exact} {s}");
        // Point on an edge extension in-plane.
        let p = [2.0, 0.0, 0.0];
        let q = brute(p, &t, 6, |y| 1.0 / norm(sub(y, p)));
        assert!((tri_inverse_distance(p, &t) - q).abs() < 1e-7);
    }
}
