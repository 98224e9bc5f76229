//! Leading eigenpairs of symmetric positive operators.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone)]
pub struct EigenPairs {
    /// Eigenvalues, descending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns.
    pub vectors: DMatrix<f64>,
    /// Relative residuals ‖A v − λ v‖ / λ.
    pub residuals: Vec<f64>,
}

/// Full decomposition of a dense symmetric matrix, sorted descending.
pub fn dense_symmetric(a: &DMatrix<f64>) -> EigenPairs {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let n = a.nrows();
    let mut vectors = DMatrix::zeros(n, order.len());
    let mut values = Vec::with_capacity(order.len());
    for (c, &i) in order.iter().enumerate() {
        values.push(eig.eigenvalues[i]);
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    let mut residuals = Vec::with_capacity(values.len());
    for (c, lam) in values.iter().enumerate() {
        let v = vectors.column(c);
        let r = a * v - v * *lam;
        residuals.push(r.norm() / lam.abs().max(f64::MIN_POSITIVE));
    }
    EigenPairs {
        values,
        vectors,
        residuals,
    }
}

/// Block subspace iteration with Rayleigh–Ritz for the `count` largest
/// eigenpairs of a symmetric positive semi-definite operator.
pub fn subspace_iteration<F>(
    n: usize,
    count: usize,
    guard: usize,
    apply: F,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<EigenPairs>
where
    F: Fn(&[f64], &mut [f64]),
{
    let p = (count + guard).min(n);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>() - 0.5);
    let mut z = DMatrix::zeros(n, p);
    let mut last_res = vec![f64::INFINITY; count];
    for _ in 0..max_iter {
        let q = orthonormalize(&x);
        for c in 0..p {
            let col: Vec<f64> = q.column(c).iter().copied().collect();
            let mut out = vec![0.0; n];
            apply(&col, &mut out);
            z.set_column(c, &DVector::from_vec(out));
        }
        let mut h = q.transpose() * &z;
        h = (&h + h.transpose()) * 0.5;
        let small = dense_symmetric(&h);
        let u = &q * &small.vectors;
        let au = &z * &small.vectors;
        let mut converged = true;
        for i in 0..count {
            let lam = small.values[i];
            let r = au.column(i) - u.column(i) * lam;
            last_res[i] = r.norm() / lam.abs().max(f64::MIN_POSITIVE);
            if last_res[i] > tol {
                converged = false;
            }
        }
        if converged {
            return Ok(EigenPairs {
                values: small.values[..count].to_vec(),
                vectors: u.columns(0, count).into_owned(),
                residuals: last_res,
            });
        }
        x = au;
    }
    let worst = last_res.iter().cloned().fold(0.0, f64::max);
    Err(Error::Numerical(format!(
        "subspace iteration did not converge in {max_iter} sweeps; worst relative residual {worst:.3e}"
    )))
}

/// Orthonormal basis of the column span (two passes of Gram–Schmidt).
pub fn orthonormalize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = x.clone();
    let p = q.ncols();
    for c in 0..p {
        for _ in 0..2 {
            for j in 0..c {
                let proj = q.column(j).dot(&q.column(c));
                let qj = q.column(j).into_owned();
                let mut col = q.column_mut(c);
                col.axpy(-proj, &qj, 1.0);
            }
        }
        let nrm = q.column(c).norm();
        if nrm > 0.0 {
            q.column_mut(c).scale_mut(1.0 / nrm);
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subspace_matches_dense_on_diagonal_operator() {
        let n = 200;
        let diag: Vec<f64> = (0..n).map(|i| 1.0 / (1.0 + i as f64).powi(2)).collect();
        let apply = |v: &[f64], out: &mut [f64]| {
            for i in 0..n {
                out[i] = diag[i] * v[i];
            }
        };
        let e = subspace_iteration(n, 4, 6, apply, 1e-9, 2000, 1).unwrap();
        for (i, v) in e.values.iter().enumerate() {
            assert!((v - diag[i]).abs() < 1e-12, "{i}: {v}");
        }
    }

    #[test]
    fn degenerate_pair_is_resolved() {
        let n = 50;
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = 1.0 / (1.0 + i as f64);
        }
        a[(1, 1)] = 1.0;
        let e = subspace_iteration(n, 3, 4, |v, out| {
            let r = &a * DVector::from_column_slice(v);
            out.copy_from_slice(r.as_slice());
        }, 1e-10, 5000, 2)
        .unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-12 && (e.values[1] - 1.0).abs() < 1e-12);
        assert!((e.values[2] - 1.0 / 3.0).abs() < 1e-12);
    }
}
