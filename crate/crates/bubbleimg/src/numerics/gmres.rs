//! Restarted GMRES for complex matrix-free operators.

use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, Copy)]
pub struct GmresParams {
    pub restart: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GmresParams {
    fn default() -> Self {
        GmresParams {
            restart: 50,
            max_iter: 2000,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmresOutcome {
    pub x: Vec<C64>,
    pub iterations: usize,
    pub residual: f64,
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dotc(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Solve `A x = b` with `apply(v, out)` computing `out = A v`.
///
/// Stops when `‖b − A x‖ ≤ tol ‖b‖`; unpreconditioned.
pub fn gmres<F>(apply: F, b: &[C64], x0: Option<&[C64]>, p: GmresParams) -> Result<GmresOutcome>
where
    F: Fn(&[C64], &mut [C64]),
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![C64::new(0.0, 0.0); n]);
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            x: vec![C64::new(0.0, 0.0); n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let m = p.restart.max(1);
    let mut tmp = vec![C64::new(0.0, 0.0); n];
    let mut iters = 0;
    let mut rel = f64::INFINITY;
    while iters < p.max_iter {
        apply(&x, &mut tmp);
        let r: Vec<C64> = b.iter().zip(&tmp).map(|(b, a)| b - a).collect();
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= p.tol {
            break;
        }
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![C64::new(0.0, 0.0); m];
        let mut g = vec![C64::new(0.0, 0.0); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for k in 0..m {
            if iters >= p.max_iter {
                break;
            }
            iters += 1;
            let mut w = vec![C64::new(0.0, 0.0); n];
            apply(&basis[k], &mut w);
            // Modified Gram–Schmidt, applied twice for stability.
            for _ in 0..2 {
                for (j, q) in basis.iter().enumerate() {
                    let c = dotc(q, &w);
                    h[j][k] += c;
                    for (wi, qi) in w.iter_mut().zip(q) {
                        *wi -= c * qi;
                    }
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = C64::new(hn, 0.0);
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j].conj() * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let (c, s) = givens(h[k][k], h[k + 1][k]);
            cs[k] = c;
            sn[k] = s;
            h[k][k] = c * h[k][k] + s * h[k + 1][k];
            h[k + 1][k] = C64::new(0.0, 0.0);
            g[k + 1] = -s.conj() * g[k];
            g[k] *= c;
            k_used = k + 1;
            rel = g[k + 1].norm() / bnorm;
            if hn > 0.0 {
                basis.push(w.iter().map(|v| v / hn).collect());
            }
            if rel <= p.tol || hn == 0.0 {
                break;
            }
        }
        // Back substitution on the triangular system.
        let mut y = vec![C64::new(0.0, 0.0); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            if !(h[i][i].norm() > 1e-300) {
                return Err(Error::Solver {
                    iterations: iters,
                    residual: rel,
                });
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, qi) in x.iter_mut().zip(&basis[j]) {
                *xi += yj * qi;
            }
        }
        if rel <= p.tol {
            apply(&x, &mut tmp);
            let true_rel = norm(&b.iter().zip(&tmp).map(|(b, a)| b - a).collect::<Vec<_>>()) / bnorm;
            rel = true_rel;
            if true_rel <= p.tol * 10.0 {
                break;
            }
        }
    }
    if rel > p.tol * 10.0 || !rel.is_finite() {
        return Err(Error::Solver {
            iterations: iters,
            residual: rel,
        });
    }
    Ok(GmresOutcome {
        x,
        iterations: iters,
        residual: rel,
    })
}

/// Complex Givens rotation zeroing `b` in `(a, b)`: real cosine, complex sine.
fn givens(a: C64, b: C64) -> (f64, C64) {
    let an = a.norm();
    let bn = b.norm();
    if bn == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    if an == 0.0 {
        return (0.0, b.conj() / bn);
    }
    let r = (an * an + bn * bn).sqrt();
    let c = an / r;
    let s = (a / an) * b.conj() / r;
    (c, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn solves_random_well_conditioned_system() {
        let n = 60;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a: Vec<Vec<C64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let d = if i == j { 4.0 } else { 0.0 };
                        C64::new(d + 0.3 * rng.gen::<f64>() / (n as f64).sqrt(), 0.3 * rng.gen::<f64>() / (n as f64).sqrt())
                    })
                    .collect()
            })
            .collect();
        let xt: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let b: Vec<C64> = a.iter().map(|row| row.iter().zip(&xt).map(|(a, x)| a * x).sum()).collect();
        let apply = |v: &[C64], out: &mut [C64]| {
            for (o, row) in out.iter_mut().zip(&a) {
                *o = row.iter().zip(v).map(|(a, x)| a * x).sum();
            }
        };
        let sol = gmres(apply, &b, None, GmresParams { restart: 10, ..Default::default() }).unwrap();
        let err = sol.x.iter().zip(&xt).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-6, "err={err}");
        assert!(sol.residual <= 1e-7);
    }

    #[test]
    fn reports_stall() {
        // Singular operator with the right-hand side outside its range.
        let apply = |v: &[C64], out: &mut [C64]| {
            out[0] = v[0];
            out[1] = C64::new(0.0, 0.0);
        };
        let b = [C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
        let r = gmres(apply, &b, None, GmresParams { restart: 2, max_iter: 8, tol: 1e-10 });
        assert!(matches!(r, Err(Error::Solver { .. })));
    }
}
