//! Asymptotic forward models for a single small bubble.

use crate::error::{Error, Result};
use crate::geometry::Shape;
use crate::media::{BubbleSpec, MinnaertConstant, Regime};
use crate::numerics::vec3::dist;
use crate::spectrum::{body_resonance, EigenCluster, WSolver};
use crate::{Vec3, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Relative pole guard `|ω² − ω²_res| < POLE_GUARD·ω²_res`.
pub const POLE_GUARD: f64 = 1e-9;

/// Shape-only data entering the resonance formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeFactors {
    pub mu: f64,
    pub volume: f64,
    pub area: f64,
}

impl ShapeFactors {
    pub fn of(shape: &Shape, quad_order: usize) -> Result<ShapeFactors> {
        let m = shape.measures();
        Ok(ShapeFactors {
            mu: shape.mu(quad_order)?,
            volume: m.volume,
            area: m.area,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ResonanceSource {
    Minnaert { rho0_z: f64, mu: f64, volume: f64 },
    BodyWave { lambda: f64, moment_sq: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceInfo {
    pub omega: f64,
    pub source: ResonanceSource,
}

impl ResonanceInfo {
    pub fn omega2(&self) -> f64 {
        self.omega * self.omega
    }

    pub fn regime(&self) -> Regime {
        match self.source {
            ResonanceSource::Minnaert { .. } => Regime::Minnaert,
            ResonanceSource::BodyWave { .. } => Regime::BodyWave,
        }
    }
}

/// `ω_M = √(8π k̄₁ / (ρ₀(z) μ_∂B))`. With `allow_dense_background` the
/// hypothesis `ρ₀(z) < ρ̄₁` is not enforced.
pub fn minnaert_frequency(bubble: &BubbleSpec, rho0_z: f64, shape: &ShapeFactors, allow_dense_background: bool) -> Result<ResonanceInfo> {
    minnaert_frequency_with(bubble, rho0_z, shape, MinnaertConstant::EightPi, allow_dense_background)
}

pub fn minnaert_frequency_with(
    bubble: &BubbleSpec,
    rho0_z: f64,
    shape: &ShapeFactors,
    constant: MinnaertConstant,
    allow_dense_background: bool,
) -> Result<ResonanceInfo> {
    if bubble.regime != Regime::Minnaert {
        return Err(Error::Precondition("Minnaert frequency needs a Minnaert-regime bubble".into()));
    }
    if !(rho0_z > 0.0 && shape.mu > 0.0) {
        return Err(Error::Domain("ρ₀(z) and μ must be positive".into()));
    }
    if !allow_dense_background && rho0_z >= bubble.rho_bar {
        return Err(Error::Precondition(format!(
            "background density {rho0_z} is not below the scaled bubble density {}",
            bubble.rho_bar
        )));
    }
    Ok(ResonanceInfo {
        omega: (constant.value() * bubble.k_bar / (rho0_z * shape.mu)).sqrt(),
        source: ResonanceSource::Minnaert {
            rho0_z,
            mu: shape.mu,
            volume: shape.volume,
        },
    })
}

/// `ω_{n₀}` of a cluster with its full moment.
pub fn body_wave_resonance(bubble: &BubbleSpec, cluster: &EigenCluster) -> Result<ResonanceInfo> {
    Ok(ResonanceInfo {
        omega: body_resonance(bubble, cluster.lambda)?,
        source: ResonanceSource::BodyWave {
            lambda: cluster.lambda,
            moment_sq: cluster.moment_sq,
        },
    })
}

fn pole_check(omega: f64, res: &ResonanceInfo) -> Result<f64> {
    let w2 = omega * omega;
    let p = res.omega2();
    if (w2 - p).abs() < POLE_GUARD * p {
        return Err(Error::Pole { omega2: w2, pole: p });
    }
    Ok(w2 - p)
}

fn minnaert_parts(res: &ResonanceInfo) -> Result<f64> {
    match res.source {
        ResonanceSource::Minnaert { volume, .. } => Ok(volume),
        _ => Err(Error::Precondition("expected a Minnaert resonance".into())),
    }
}

fn body_parts(res: &ResonanceInfo) -> Result<f64> {
    match res.source {
        ResonanceSource::BodyWave { moment_sq, .. } => Ok(moment_sq),
        _ => Err(Error::Precondition("expected a body-wave resonance".into())),
    }
}

/// `ω²_M |B| ε / (k̄₁(ω² − ω²_M))`.
pub fn regime1_factor(omega: f64, bubble: &BubbleSpec, res: &ResonanceInfo) -> Result<f64> {
    let volume = minnaert_parts(res)?;
    let d = pole_check(omega, res)?;
    Ok(res.omega2() * volume * bubble.eps / (bubble.k_bar * d))
}

/// Far field with a Minnaert bubble:
/// `v^∞ − [ω²_M/(k̄₁(ω²−ω²_M))] |B| ε (ρ̄₀/4π) v(z,−x̂) v(z,θ)`.
pub fn farfield_regime1(v_inf: C64, omega: f64, bubble: &BubbleSpec, res: &ResonanceInfo, rho_ext: f64, v_minus_xhat: C64, v_theta: C64) -> Result<C64> {
    let f = regime1_factor(omega, bubble, res)?;
    Ok(v_inf - v_minus_xhat * v_theta * (f * rho_ext / (4.0 * PI)))
}

/// The same with the extra `ω²` carried by the scattered-field expansion.
pub fn farfield_regime1_derived(
    v_inf: C64,
    omega: f64,
    bubble: &BubbleSpec,
    res: &ResonanceInfo,
    rho_ext: f64,
    v_minus_xhat: C64,
    v_theta: C64,
) -> Result<C64> {
    let f = regime1_factor(omega, bubble, res)? * omega * omega;
    Ok(v_inf - v_minus_xhat * v_theta * (f * rho_ext / (4.0 * PI)))
}

fn proximity(x: Vec3, bubble: &BubbleSpec) -> Result<()> {
    let r = dist(x, bubble.center);
    if r < 10.0 * bubble.eps {
        return Err(Error::Proximity(format!("observation point at distance {r} is within 10ε of the bubble")));
    }
    Ok(())
}

/// `v^s(x) − [ω²ω²_M/(k̄₁(ω²−ω²_M))] |B| ε G(x, z) v(z,θ)`.
pub fn scattered_regime1(v_s: C64, green_xz: C64, omega: f64, bubble: &BubbleSpec, res: &ResonanceInfo, x: Vec3, v_theta: C64) -> Result<C64> {
    proximity(x, bubble)?;
    let f = regime1_factor(omega, bubble, res)? * omega * omega;
    Ok(v_s - green_xz * v_theta * f)
}

/// `(1/k̄₁) ω²ω²_{n₀}/(ω²−ω²_{n₀}) m² ε`.
pub fn regime2_factor(omega: f64, bubble: &BubbleSpec, res: &ResonanceInfo) -> Result<f64> {
    let m2 = body_parts(res)?;
    let d = pole_check(omega, res)?;
    Ok(omega * omega * res.omega2() * m2 * bubble.eps / (bubble.k_bar * d))
}

/// Regime-2 bubble coefficient; `w_integral = Some(∫_D W)` selects the
/// improved form `−(ω²/k₁)∫_D W`.
pub fn regime2_coefficient(omega: f64, bubble: &BubbleSpec, res: &ResonanceInfo, w_integral: Option<f64>) -> Result<f64> {
    match w_integral {
        None => regime2_factor(omega, bubble, res),
        Some(iw) => {
            body_parts(res)?;
            Ok(-omega * omega / bubble.k1() * iw)
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn farfield_regime2(
    v_inf: C64,
    omega: f64,
    bubble: &BubbleSpec,
    res: &ResonanceInfo,
    rho_ext: f64,
    v_minus_xhat: C64,
    v_theta: C64,
    w_integral: Option<f64>,
) -> Result<C64> {
    let f = regime2_coefficient(omega, bubble, res, w_integral)?;
    Ok(v_inf - v_minus_xhat * v_theta * (f * rho_ext / (4.0 * PI)))
}

#[allow(clippy::too_many_arguments)]
pub fn scattered_regime2(
    v_s: C64,
    green_xz: C64,
    omega: f64,
    bubble: &BubbleSpec,
    res: &ResonanceInfo,
    x: Vec3,
    v_theta: C64,
    w_integral: Option<f64>,
) -> Result<C64> {
    proximity(x, bubble)?;
    let f = regime2_coefficient(omega, bubble, res, w_integral)?;
    Ok(v_s - green_xz * v_theta * f)
}

/// `∫_D W` for the improved regime-2 expansion. The Newtonian kernel carries
/// no `ρ₀`, so the contrast enters as `γ ρ₀(z)`.
pub fn improved_w_integral(solver: &WSolver, gamma: f64, rho0_z: f64, omega: f64, eps: f64) -> Result<f64> {
    Ok(solver.solve(gamma * rho0_z, omega, eps)?.integral)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub ratio: f64,
    pub ok: bool,
    pub threshold: f64,
    /// Exponent on ε in the ratio.
    pub exponent: f64,
}

pub const DEFAULT_THRESHOLD_MINNAERT: f64 = 0.1;
pub const DEFAULT_THRESHOLD_BODY: f64 = 1.0;

/// `ε/|ω²−ω²_M|` or `ε^h/|ω²−ω²_{n₀}|` with `h = min(1, j)/2` by default.
pub fn validity_guard(eps: f64, omega: f64, res: &ResonanceInfo, j: Option<f64>, h: Option<f64>, threshold: Option<f64>) -> ValidityReport {
    let (exponent, default) = match res.regime() {
        Regime::Minnaert => (1.0, DEFAULT_THRESHOLD_MINNAERT),
        Regime::BodyWave => (h.unwrap_or(0.5 * j.unwrap_or(1.0).min(1.0)), DEFAULT_THRESHOLD_BODY),
    };
    let threshold = threshold.unwrap_or(default);
    let d = (omega * omega - res.omega2()).abs();
    let ratio = if d == 0.0 { f64::INFINITY } else { eps.powf(exponent) / d };
    ValidityReport {
        ratio,
        ok: ratio <= threshold,
        threshold,
        exponent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ShapeRef;

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

    fn ball() -> ShapeFactors {
        ShapeFactors::of(&Shape::Ball, 3).unwrap()
    }

    #[test]
    fn minnaert_values() {
        let b = bubble(Regime::Minnaert, 0.01, 2.0, 1.0);
        let r = minnaert_frequency(&b, 1.0, &ball(), false).unwrap();
        assert!((r.omega2() / 3.0 - 1.0).abs() < 1e-12);
        let r4 = minnaert_frequency(&b, 4.0, &ball(), true).unwrap();
        assert!((r4.omega / r.omega - 0.5).abs() < 1e-15);
        assert!(matches!(minnaert_frequency(&b, 4.0, &ball(), false), Err(Error::Precondition(_))));
        let b = bubble(Regime::Minnaert, 0.01, 2000.0, 1e5);
        let r = minnaert_frequency(&b, 1000.0, &ball(), false).unwrap();
        assert!((r.omega - 300f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn regime1_dominant_term() {
        let eps = 0.01;
        let b = bubble(Regime::Minnaert, eps, 2.0, 1.5);
        let r = minnaert_frequency(&b, 1.0, &ball(), false).unwrap();
        let one = C64::new(1.0, 0.0);
        let hi = farfield_regime1(C64::new(0.0, 0.0), (2.0 * r.omega2()).sqrt(), &b, &r, 1.0, one, one).unwrap();
        let expect = 4.0 * PI / 3.0 * eps / (4.0 * PI) / 1.5;
        assert!((hi.norm() - expect).abs() < 1e-15);
        let lo = farfield_regime1(C64::new(0.0, 0.0), (0.5 * r.omega2()).sqrt(), &b, &r, 1.0, one, one).unwrap();
        assert!(hi.re * lo.re < 0.0);
        let none = farfield_regime1(one, 2.0, &b.with_eps(0.0), &r, 1.0, one, one).unwrap();
        assert_eq!(none, one);
        assert!(matches!(farfield_regime1(one, r.omega, &b, &r, 1.0, one, one), Err(Error::Pole { .. })));
    }

    #[test]
    fn scattered_to_far_field_limit() {
        // Homogeneous background: G(x,z) ~ ρ̄₀ e^{iκ|x|}/(4π|x|) e^{−iκx̂·z}.
        let (rho, k, w): (f64, f64, f64) = (1.0, 1.0, 1.3);
        let kappa = w * (rho / k).sqrt();
        let z = [0.1, -0.2, 0.05];
        let b = bubble(Regime::Minnaert, 0.02, 2.0, 1.0).at(z);
        let r = minnaert_frequency(&b, rho, &ball(), false).unwrap();
        let theta = [0.0, 0.0, 1.0];
        let xh = [0.0, 0.6, -0.8];
        let vz = crate::fields::plane_wave(kappa, theta, z);
        let vm = crate::fields::plane_wave(kappa, crate::numerics::vec3::scale(xh, -1.0), z);
        let big = 1e3 * 2.0;
        let x = crate::numerics::vec3::scale(xh, big);
        let g = crate::fields::green_homogeneous(rho, k, w, x, z).unwrap();
        let us = scattered_regime1(C64::new(0.0, 0.0), g, w, &b, &r, x, vz).unwrap();
        let lim = us * big * C64::from_polar(1.0, -kappa * big);
        let ff = farfield_regime1_derived(C64::new(0.0, 0.0), w, &b, &r, rho, vm, vz).unwrap();
        assert!((lim - ff).norm() <= 0.01 * ff.norm());
        // Dominant-term modulus follows the kernel.
        let near = crate::numerics::vec3::add(z, [0.5, 0.0, 0.0]);
        let gn = crate::fields::green_homogeneous(rho, k, w, near, z).unwrap();
        let un = scattered_regime1(C64::new(0.0, 0.0), gn, w, &b, &r, near, vz).unwrap();
        let f = regime1_factor(w, &b, &r).unwrap() * w * w;
        assert!((un.norm() - f.abs() * rho / (4.0 * PI * 0.5)).abs() < 1e-14);
        assert!(matches!(
            scattered_regime1(C64::new(0.0, 0.0), gn, w, &b, &r, crate::numerics::vec3::add(z, [0.1, 0.0, 0.0]), vz),
            Err(Error::Proximity(_))
        ));
    }

    #[test]
    fn regime2_linear_in_moment() {
        let b = bubble(Regime::BodyWave, 0.1, 1.0, 1.0);
        let mk = |m2: f64| ResonanceInfo {
            omega: PI / 2.0,
            source: ResonanceSource::BodyWave { lambda: 4.0 / (PI * PI), moment_sq: m2 },
        };
        let one = C64::new(1.0, 0.0);
        let a = farfield_regime2(C64::new(0.0, 0.0), 1.0, &b, &mk(0.5), 1.0, one, one, None).unwrap();
        let c = farfield_regime2(C64::new(0.0, 0.0), 1.0, &b, &mk(1.5), 1.0, one, one, None).unwrap();
        assert!((c / a - 3.0).norm() < 1e-14);
        let z = farfield_regime2(one, 1.0, &b.with_eps(0.0), &mk(1.0), 1.0, one, one, None).unwrap();
        assert_eq!(z, one);
    }

    #[test]
    fn validity_reports() {
        let res = ResonanceInfo {
            omega: 2.0,
            source: ResonanceSource::Minnaert { rho0_z: 1.0, mu: 1.0, volume: 1.0 },
        };
        let r = validity_guard(0.1, 2.0, &res, None, None, None);
        assert!(!r.ok && r.ratio.is_infinite());
        let r = validity_guard(1e-4, 5f64.sqrt(), &res, None, None, None);
        assert!(r.ok && (r.ratio - 1e-4).abs() < 1e-15);
        let body = ResonanceInfo {
            omega: 2.0,
            source: ResonanceSource::BodyWave { lambda: 1.0, moment_sq: 1.0 },
        };
        let r = validity_guard(0.01, 5f64.sqrt(), &body, Some(2.0), None, None);
        assert!((r.exponent - 0.5).abs() < 1e-15 && (r.ratio - 0.1).abs() < 1e-14);
    }
}
