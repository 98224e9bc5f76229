//! Discrete 3-D convolution with a translation-invariant kernel on a regular
//! lattice, evaluated by zero-padded FFTs.

use crate::C64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// `y_p = Σ_q K(p − q) x_q` for lattice indices `p, q` in `dims`.
pub struct Convolution3 {
    dims: [usize; 3],
    padded: [usize; 3],
    kernel_hat: Vec<C64>,
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
}

fn fast_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

impl Convolution3 {
    /// `kernel(di, dj, dk)` is evaluated for every offset in
    /// `−(dims−1) ..= dims−1` along each axis.
    pub fn new<K>(dims: [usize; 3], kernel: K) -> Convolution3
    where
        K: Fn(i64, i64, i64) -> C64,
    {
        let padded = [
            fast_size(2 * dims[0] - 1),
            fast_size(2 * dims[1] - 1),
            fast_size(2 * dims[2] - 1),
        ];
        let mut planner = FftPlanner::new();
        let fwd = [
            planner.plan_fft_forward(padded[0]),
            planner.plan_fft_forward(padded[1]),
            planner.plan_fft_forward(padded[2]),
        ];
        let inv = [
            planner.plan_fft_inverse(padded[0]),
            planner.plan_fft_inverse(padded[1]),
            planner.plan_fft_inverse(padded[2]),
        ];
        let total = padded[0] * padded[1] * padded[2];
        let mut arr = vec![C64::new(0.0, 0.0); total];
        let off = |a: usize, d: usize| -> Option<i64> {
            let n = dims[d];
            let m = padded[d];
            if a < n {
                Some(a as i64)
            } else if a + n > m {
                Some(a as i64 - m as i64)
            } else {
                None
            }
        };
        for a in 0..padded[0] {
            let Some(di) = off(a, 0) else { continue };
            for b in 0..padded[1] {
                let Some(dj) = off(b, 1) else { continue };
                for c in 0..padded[2] {
                    let Some(dk) = off(c, 2) else { continue };
                    arr[(a * padded[1] + b) * padded[2] + c] = kernel(di, dj, dk);
                }
            }
        }
        let mut conv = Convolution3 {
            dims,
            padded,
            kernel_hat: Vec::new(),
            fwd,
            inv,
        };
        conv.transform(&mut arr, false);
        conv.kernel_hat = arr;
        conv
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&self, data: &mut [C64], inverse: bool) {
        let [m0, m1, m2] = self.padded;
        let plans = if inverse { &self.inv } else { &self.fwd };
        // Axis 2 is contiguous.
        for line in data.chunks_mut(m2) {
            plans[2].process(line);
        }
        let mut buf = vec![C64::new(0.0, 0.0); m1.max(m0)];
        for a in 0..m0 {
            for c in 0..m2 {
                for b in 0..m1 {
                    buf[b] = data[(a * m1 + b) * m2 + c];
                }
                plans[1].process(&mut buf[..m1]);
                for b in 0..m1 {
                    data[(a * m1 + b) * m2 + c] = buf[b];
                }
            }
        }
        for b in 0..m1 {
            for c in 0..m2 {
                for a in 0..m0 {
                    buf[a] = data[(a * m1 + b) * m2 + c];
                }
                plans[0].process(&mut buf[..m0]);
                for a in 0..m0 {
                    data[(a * m1 + b) * m2 + c] = buf[a];
                }
            }
        }
    }

    /// Apply the convolution to `x` laid out with index `(i·n1 + j)·n2 + k`.
    pub fn apply(&self, x: &[C64], out: &mut [C64]) {
        let [n0, n1, n2] = self.dims;
        let [m0, m1, m2] = self.padded;
        let mut work = vec![C64::new(0.0, 0.0); m0 * m1 * m2];
        for i in 0..n0 {
            for j in 0..n1 {
                let src = (i * n1 + j) * n2;
                let dst = (i * m1 + j) * m2;
                work[dst..dst + n2].copy_from_slice(&x[src..src + n2]);
            }
        }
        self.transform(&mut work, false);
        for (w, k) in work.iter_mut().zip(&self.kernel_hat) {
            *w *= k;
        }
        self.transform(&mut work, true);
        let scale = 1.0 / (m0 * m1 * m2) as f64;
        for i in 0..n0 {
            for j in 0..n1 {
                let src = (i * m1 + j) * m2;
                let dst = (i * n1 + j) * n2;
                for k in 0..n2 {
                    out[dst + k] = work[src + k] * scale;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_sum() {
        let dims = [4, 5, 3];
        let kernel = |a: i64, b: i64, c: i64| C64::new(1.0 / (1.0 + (a * a + 2 * b * b + 3 * c * c) as f64), a as f64 * 0.1 + c as f64);
        let conv = Convolution3::new(dims, kernel);
        let n = conv.len();
        let x: Vec<C64> = (0..n).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut y = vec![C64::new(0.0, 0.0); n];
        conv.apply(&x, &mut y);
        let idx = |i: usize, j: usize, k: usize| (i * dims[1] + j) * dims[2] + k;
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let mut s = C64::new(0.0, 0.0);
                    for a in 0..dims[0] {
                        for b in 0..dims[1] {
                            for c in 0..dims[2] {
                                s += kernel(i as i64 - a as i64, j as i64 - b as i64, k as i64 - c as i64) * x[idx(a, b, c)];
                            }
                        }
                    }
                    assert!((s - y[idx(i, j, k)]).norm() < 1e-12, "{s} {}", y[idx(i, j, k)]);
                }
            }
        }
    }
}
