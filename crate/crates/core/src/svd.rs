//! One-sided Jacobi SVD for small complex matrices.

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;

const MAX_SWEEPS: usize = 60;

pub(crate) struct Svd {
    /// Singular values in descending order.
    pub sigma: Vec<f64>,
    /// `m x k` left singular vectors, `k = min(m, n)`.
    pub u: Array2<Complex64>,
    /// `n x k` right singular vectors.
    pub v: Array2<Complex64>,
}

/// Thin SVD `a = u diag(sigma) v^*`. Columns belonging to zero singular
/// values of `u` are zero.
pub(crate) fn svd(a: ArrayView2<Complex64>) -> Svd {
    let (m, n) = a.dim();
    if m < n {
        let t = svd(a.t().mapv(|z| z.conj()).view());
        return Svd {
            sigma: t.sigma,
            u: t.v,
            v: t.u,
        };
    }
    let mut w = a.to_owned();
    let mut v = Array2::from_shape_fn((n, n), |(i, j)| if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) });
    let eps = f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, Complex64::new(0.0, 0.0));
                for i in 0..m {
                    let (x, y) = (w[[i, p]], w[[i, q]]);
                    alpha += x.norm_sqr();
                    beta += y.norm_sqr();
                    gamma += x.conj() * y;
                }
                let g = gamma.norm();
                if g == 0.0 || g <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for i in 0..mat.nrows() {
                        let x = mat[[i, p]];
                        let y = mat[[i, q]] * phase.conj();
                        mat[[i, p]] = x * c - y * s;
                        mat[[i, q]] = x * s + y * c;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = w.axis_iter(Axis(1)).map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let sigma: Vec<f64> = order.iter().map(|&c| norms[c]).collect();
    let u = Array2::from_shape_fn((m, n), |(i, c)| {
        let s = sigma[c];
        if s > 0.0 {
            w[[i, order[c]]] / s
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let v = Array2::from_shape_fn((n, n), |(i, c)| v[[i, order[c]]]);
    Svd { sigma, u, v }
}
