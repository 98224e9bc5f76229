//! Spherical Bessel functions and Legendre polynomials.

/// Spherical Bessel functions `j_l(x)` for `l = 0..=lmax`, `x > 0`.
///
/// Miller's downward recurrence normalised against `j_0` (or `j_1` near zeros
/// of `j_0`); stable for every order relative to the argument.
pub fn sph_jn(lmax: usize, x: f64) -> Vec<f64> {
    assert!(x > 0.0, "sph_jn needs a positive argument");
    let start = lmax + 30 + x.ceil() as usize + (x.sqrt() as usize) * 4;
    let mut f = vec![0.0; start + 2];
    f[start + 1] = 0.0;
    f[start] = 1e-30;
    for l in (1..=start).rev() {
        f[l - 1] = (2 * l + 1) as f64 / x * f[l] - f[l + 1];
        if f[l - 1].abs() > 1e250 {
            for v in f.iter_mut().skip(l - 1) {
                *v *= 1e-250;
            }
        }
    }
    let (s, c) = x.sin_cos();
    let j0 = s / x;
    let j1 = s / (x * x) - c / x;
    let norm = if j0.abs() >= j1.abs() { j0 / f[0] } else { j1 / f[1] };
    f.truncate(lmax + 1);
    for v in f.iter_mut() {
        *v *= norm;
    }
    f
}

/// Spherical Bessel functions of the second kind `y_l(x)`, upward recurrence.
pub fn sph_yn(lmax: usize, x: f64) -> Vec<f64> {
    assert!(x > 0.0, "sph_yn needs a positive argument");
    let (s, c) = x.sin_cos();
    let mut y = vec![0.0; lmax + 1];
    y[0] = -c / x;
    if lmax >= 1 {
        y[1] = -c / (x * x) - s / x;
    }
    for l in 1..lmax {
        y[l + 1] = (2 * l + 1) as f64 / x * y[l] - y[l - 1];
    }
    y
}

/// Derivatives from a table `f_0..f_{lmax+1}` of any spherical Bessel family.
pub fn sph_derivs(f: &[f64], x: f64) -> Vec<f64> {
    let lmax = f.len() - 2;
    let mut d = vec![0.0; lmax + 1];
    d[0] = -f[1];
    for l in 1..=lmax {
        d[l] = f[l - 1] - (l + 1) as f64 / x * f[l];
    }
    d
}

/// Legendre polynomials `P_l(t)` for `l = 0..=lmax`.
pub fn legendre(lmax: usize, t: f64) -> Vec<f64> {
    let mut p = vec![0.0; lmax + 1];
    p[0] = 1.0;
    if lmax >= 1 {
        p[1] = t;
    }
    for l in 1..lmax {
        p[l + 1] = ((2 * l + 1) as f64 * t * p[l] - l as f64 * p[l - 1]) / (l + 1) as f64;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    // Closed forms for low orders.
    fn j2(x: f64) -> f64 {
        (3.0 / (x * x) - 1.0) * x.sin() / x - 3.0 * x.cos() / (x * x)
    }
    fn y2(x: f64) -> f64 {
        -(3.0 / (x * x) - 1.0) * x.cos() / x - 3.0 * x.sin() / (x * x)
    }

    #[test]
    fn low_orders_match_closed_forms() {
        for &x in &[1e-3, 0.03, 0.7, 3.0, 12.5, 40.0] {
            let j = sph_jn(4, x);
            let y = sph_yn(4, x);
            assert!((j[0] - x.sin() / x).abs() <= 1e-14 * (1.0 + j[0].abs()));
            if x >= 0.5 {
                assert!((j[2] - j2(x)).abs() <= 1e-12 * (1.0 + j[2].abs()), "x={x} {} {}", j[2], j2(x));
            } else {
                // The closed form cancels badly here; use the series.
                let s = x * x / 15.0 * (1.0 - x * x / 14.0 + x.powi(4) / 504.0);
                assert!((j[2] - s).abs() <= 1e-12 * s, "x={x} {} {s}", j[2]);
            }
            assert!((y[2] - y2(x)).abs() <= 1e-12 * y[2].abs());
        }
    }

    #[test]
    fn small_argument_power_law() {
        // j_l(x) ~ x^l / (2l+1)!!
        let x = 1e-2;
        let j = sph_jn(6, x);
        let mut df = 1.0;
        for l in 0..=6 {
            df *= (2 * l + 1) as f64;
            let approx = x.powi(l as i32) / df;
            assert!((j[l] / approx - 1.0).abs() < 1e-4, "l={l}");
        }
    }

    #[test]
    fn wronskian() {
        // j_l y_l' - j_l' y_l = 1/x^2
        for &x in &[0.05, 1.3, 9.0] {
            let j = sph_jn(8, x);
            let y = sph_yn(8, x);
            let dj = sph_derivs(&j, x);
            let dy = sph_derivs(&y, x);
            for l in 0..7 {
                let w = j[l] * dy[l] - dj[l] * y[l];
                assert!((w * x * x - 1.0).abs() < 1e-9, "x={x} l={l} w={w}");
            }
        }
    }

    #[test]
    fn legendre_values() {
        let p = legendre(3, 0.5);
        assert!((p[2] - (3.0 * 0.25 - 1.0) / 2.0).abs() < 1e-15);
        assert!((p[3] - (5.0 * 0.125 - 1.5) / 2.0).abs() < 1e-15);
        let p = legendre(10, 1.0);
        assert!(p.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }
}
