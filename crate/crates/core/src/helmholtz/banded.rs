//! Complex band matrices and an in-place LU factorisation without pivoting.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Square matrix with `bw` sub- and super-diagonals, stored row by row:
/// entry `(i, j)` lives at `i * (2 * bw + 1) + (j + bw - i)`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<Complex64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix {
            n,
            bw,
            data: vec![Complex64::new(0.0, 0.0); n * (2 * bw + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn width(&self) -> usize {
        2 * self.bw + 1
    }

    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n && i.abs_diff(j) <= self.bw);
        i * self.width() + (j + self.bw - i)
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i.abs_diff(j) > self.bw {
            return Complex64::new(0.0, 0.0);
        }
        self.data[self.index(i, j)]
    }

    /// Panics if `(i, j)` lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        assert!(i.abs_diff(j) <= self.bw, "({i}, {j}) outside bandwidth {}", self.bw);
        let k = self.index(i, j);
        self.data[k] = v;
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n);
        let w = self.width();
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.bw);
                let hi = (i + self.bw).min(self.n - 1);
                let row = &self.data[i * w..(i + 1) * w];
                (lo..=hi).map(|j| row[j + self.bw - i] * x[j]).sum()
            })
            .collect()
    }
}

/// `A = L U` with unit lower `L`, both stored in the band of `A`.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    bw: usize,
    data: Vec<Complex64>,
}

impl BandLu {
    /// Gaussian elimination without row exchanges; fails on an exactly zero pivot.
    pub fn factorize(a: BandMatrix) -> Result<Self> {
        let BandMatrix { n, bw, mut data } = a;
        let w = 2 * bw + 1;
        for k in 0..n {
            let pivot = data[k * w + bw];
            if pivot.norm_sqr() == 0.0 || !pivot.is_finite() {
                return Err(Error::invalid(format!("zero or non-finite pivot at row {k}")));
            }
            let inv = 1.0 / pivot;
            let last = (k + bw).min(n - 1);
            let (head, tail) = data.split_at_mut((k + 1) * w);
            let row_k = &head[k * w + bw + 1..k * w + bw + 1 + (last - k)];
            for i in k + 1..=last {
                let base = (i - k - 1) * w;
                let lk = base + (k + bw - i);
                let l = tail[lk] * inv;
                if l.re == 0.0 && l.im == 0.0 {
                    continue;
                }
                tail[lk] = l;
                let start = base + (k + 1 + bw - i);
                for (x, &y) in tail[start..start + (last - k)].iter_mut().zip(row_k) {
                    *x -= l * y;
                }
            }
        }
        Ok(BandLu { n, bw, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        assert_eq!(b.len(), self.n);
        let (n, bw, w) = (self.n, self.bw, 2 * self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.data[i * w..];
            let mut acc = b[i];
            for j in lo..i {
                acc -= row[j + bw - i] * b[j];
            }
            b[i] = acc;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let row = &self.data[i * w..];
            let mut acc = b[i];
            for j in i + 1..=hi {
                acc -= row[j + bw - i] * b[j];
            }
            b[i] = acc / row[bw];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_band(n: usize, bw: usize, rng: &mut Rng) -> BandMatrix {
        let mut a = BandMatrix::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                a.set(i, j, c(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)));
            }
            // diagonal dominance keeps the unpivoted elimination stable
            let d = a.get(i, i) + c(4.0 * bw as f64 + 2.0, 1.0);
            a.set(i, i, d);
        }
        a
    }

    #[test]
    fn solves_random_band_systems() {
        let mut rng = Rng::new(17);
        for (n, bw) in [(1, 0), (5, 1), (40, 3), (64, 8), (30, 29)] {
            let a = random_band(n, bw, &mut rng);
            let x: Vec<Complex64> = (0..n).map(|_| c(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))).collect();
            let mut b = a.matvec(&x);
            let lu = BandLu::factorize(a).unwrap();
            lu.solve_in_place(&mut b);
            let err = x.iter().zip(&b).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "n={n} bw={bw} err={err}");
        }
    }

    #[test]
    fn matches_dense_elimination() {
        // tridiagonal [2 -1; -1 2 -1; ...] has the closed-form inverse
        // (A^{-1})_{ij} = min(i,j)+1 * (n - max(i,j)) / (n + 1)
        let n = 7;
        let mut a = BandMatrix::zeros(n, 1);
        for i in 0..n {
            a.set(i, i, c(2.0, 0.0));
            if i + 1 < n {
                a.set(i, i + 1, c(-1.0, 0.0));
                a.set(i + 1, i, c(-1.0, 0.0));
            }
        }
        let lu = BandLu::factorize(a).unwrap();
        for col in 0..n {
            let mut e = vec![c(0.0, 0.0); n];
            e[col] = c(1.0, 0.0);
            lu.solve_in_place(&mut e);
            for (row, v) in e.iter().enumerate() {
                let expect = ((row.min(col) + 1) * (n - row.max(col))) as f64 / (n + 1) as f64;
                assert!((v.re - expect).abs() < 1e-14 && v.im.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_pivot_is_an_error() {
        let a = BandMatrix::zeros(3, 1);
        assert!(BandLu::factorize(a).is_err());
    }
}
