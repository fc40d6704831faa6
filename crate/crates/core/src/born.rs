//! Born-linearised forward map, equivariant back-projection and filtered
//! back-projection.
//!
//! Quadrature conventions: Cartesian integrals carry the pixel area `h^2`, the
//! double angular integral over sources and receivers carries
//! `(2*pi/n_sc)^2`. With these weights `apply_f` and [`BornOperator::adjoint_cartesian`]
//! are exact adjoints of each other.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FrequencySet, Grids};
use crate::helmholtz::FarField;
use crate::media::Medium;
use crate::par;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `K[m, i] = exp(-i omega rho_i cos t_m)`, split as `K = C - i S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub values: Array2<Complex64>,
    pub omega: f64,
}

impl Kernel {
    pub fn new(omega: f64, grids: &Grids) -> Self {
        let values = Array2::from_shape_fn((grids.n_sc, grids.n_rho), |(m, i)| {
            Complex64::from_polar(1.0, -omega * grids.rho(i) * grids.angle(m).cos())
        });
        Kernel { values, omega }
    }

    /// `C = cos(omega rho cos t)`.
    pub fn c(&self) -> Array2<f64> {
        self.values.mapv(|z| z.re)
    }

    /// `S = sin(omega rho cos t)`.
    pub fn s(&self) -> Array2<f64> {
        self.values.mapv(|z| -z.im)
    }
}

/// A back-projected field on the `(theta_j, rho_i)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarField<T> {
    pub values: Array2<T>,
    pub omega: f64,
}

/// `out[m, n] = input[(m + j) % n_sc, (n + j) % n_sc]`.
pub fn shift_data<T: Clone>(input: &Array2<T>, j: usize) -> Array2<T> {
    let n = input.nrows();
    assert_eq!(n, input.ncols(), "far-field data must be square");
    if n == 0 {
        return input.clone();
    }
    let j = j % n;
    Array2::from_shape_fn((n, n), |(m, k)| input[[(m + j) % n, (k + j) % n]].clone())
}

/// Data shift matching a counter-clockwise rotation of the medium by
/// `quarter_turns * 90` degrees: `far_field(rotate(eta)) = shift_data(far_field(eta), s)`.
pub fn rotation_shift(n_sc: usize, quarter_turns: usize) -> Result<usize> {
    if n_sc % 4 != 0 {
        return Err(Error::invalid(format!("n_sc = {n_sc} is not divisible by 4")));
    }
    Ok((n_sc - (quarter_turns % 4) * n_sc / 4) % n_sc)
}

fn check_square(lam: &Array2<Complex64>, grids: &Grids) -> Result<()> {
    if lam.dim() != (grids.n_sc, grids.n_sc) {
        return Err(Error::shape(format!(
            "far field is {:?}, expected ({n}, {n})",
            lam.dim(),
            n = grids.n_sc
        )));
    }
    Ok(())
}

/// Implementation II: `alpha[j, :] = w diag(K^* Lambda_j K)`, complex.
pub fn adjoint_impl2(lam: &Array2<Complex64>, kernel: &Kernel, grids: &Grids) -> Result<PolarField<Complex64>> {
    check_square(lam, grids)?;
    let k = &kernel.values;
    let w = grids.angular_weight();
    let n = grids.n_sc;
    let rows = par::map_range(n, |j| {
        let b = shift_data(lam, j).dot(k);
        let mut row = vec![ZERO; k.ncols()];
        for ((m, i), &bv) in b.indexed_iter() {
            row[i] += k[[m, i]].conj() * bv;
        }
        row.into_iter().map(|v| v * w).collect::<Vec<_>>()
    });
    Ok(PolarField {
        values: Array2::from_shape_vec((n, k.ncols()), rows.concat()).expect("n_theta x n_rho"),
        omega: kernel.omega,
    })
}

/// Implementation I: the real four-term form
/// `w 1^T [C .* (L_R C) + S .* (L_R S) + C .* (L_I S) - S .* (L_I C)]`,
/// equal to the real part of Implementation II.
pub fn adjoint_impl1(lam: &Array2<Complex64>, kernel: &Kernel, grids: &Grids) -> Result<PolarField<f64>> {
    check_square(lam, grids)?;
    let c = kernel.c();
    let s = kernel.s();
    let w = grids.angular_weight();
    let n = grids.n_sc;
    let n_rho = c.ncols();
    let rows = par::map_range(n, |j| {
        let shifted = shift_data(lam, j);
        let lr = shifted.mapv(|z| z.re);
        let li = shifted.mapv(|z| z.im);
        let terms = &c * &lr.dot(&c) + &s * &lr.dot(&s) + &c * &li.dot(&s) - &s * &li.dot(&c);
        terms.sum_axis(Axis(0)).mapv(|v| v * w).to_vec()
    });
    Ok(PolarField {
        values: Array2::from_shape_vec((n, n_rho), rows.concat()).expect("n_theta x n_rho"),
        omega: kernel.omega,
    })
}

/// Dense quadrature of the Fourier integral operator:
/// `alpha(theta_j, rho_i) = w sum_{m,n} exp(i omega rho (cos(r_m - theta_j) - cos(s_n - theta_j))) Lambda[m, n]`.
/// Quadratic in every size; meant as a reference.
pub fn adjoint_dense(lam: &Array2<Complex64>, omega: f64, grids: &Grids) -> Result<PolarField<Complex64>> {
    check_square(lam, grids)?;
    let n = grids.n_sc;
    let w = grids.angular_weight();
    let values = Array2::from_shape_fn((n, grids.n_rho), |(j, i)| {
        let (rho, theta) = (grids.rho(i), grids.angle(j));
        let mut acc = ZERO;
        for m in 0..n {
            for k in 0..n {
                let phase = omega * rho * ((grids.angle(m) - theta).cos() - (grids.angle(k) - theta).cos());
                acc += Complex64::from_polar(1.0, phase) * lam[[m, k]];
            }
        }
        acc * w
    });
    Ok(PolarField { values, omega })
}

/// Separable quadratic (three-point Lagrange) interpolation from the polar grid
/// to pixel centres, stored as nine weights per pixel. Angles wrap
/// periodically; radii beyond `rho_max` are clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpMap {
    n_eta: usize,
    n_theta: usize,
    n_rho: usize,
    entries: Vec<[(usize, f64); 9]>,
}

fn lagrange3(t: f64) -> [f64; 3] {
    // nodes at -1, 0, 1
    [0.5 * t * (t - 1.0), (1.0 - t) * (1.0 + t), 0.5 * t * (t + 1.0)]
}

impl InterpMap {
    pub fn new(grids: &Grids) -> Self {
        let n = grids.n_eta;
        let mut entries = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                let (x, y) = (grids.pixel_center(ix), grids.pixel_center(iy));
                let theta = y.atan2(x).rem_euclid(2.0 * PI);
                entries.push(Self::weights(grids, theta, x.hypot(y)));
            }
        }
        InterpMap {
            n_eta: n,
            n_theta: grids.n_theta(),
            n_rho: grids.n_rho,
            entries,
        }
    }

    fn weights(grids: &Grids, theta: f64, rho: f64) -> [(usize, f64); 9] {
        let (n_t, n_r) = (grids.n_theta() as isize, grids.n_rho);
        let u = rho.min(grids.rho_max()) / grids.rho_step();
        let cr = (u.round() as usize).clamp(1, n_r - 2);
        let wr = lagrange3(u - cr as f64);
        let v = theta / grids.angular_step();
        let ct = v.round();
        let wt = lagrange3(v - ct);
        let ct = ct as isize;
        let mut out = [(0usize, 0.0); 9];
        for (a, &wa) in wt.iter().enumerate() {
            let j = (ct + a as isize - 1).rem_euclid(n_t) as usize;
            for (b, &wb) in wr.iter().enumerate() {
                out[3 * a + b] = (j * n_r + cr + b - 1, wa * wb);
            }
        }
        out
    }

    /// Flat `(theta_j * n_rho + rho_i, weight)` pairs for an arbitrary point.
    pub fn interp_at(grids: &Grids, theta: f64, rho: f64) -> [(usize, f64); 9] {
        Self::weights(grids, theta.rem_euclid(2.0 * PI), rho.max(0.0))
    }

    pub fn n_eta(&self) -> usize {
        self.n_eta
    }

    pub fn polar_dims(&self) -> (usize, usize) {
        (self.n_theta, self.n_rho)
    }

    /// Pixel-wise weights in row-major pixel order.
    pub fn entries(&self) -> &[[(usize, f64); 9]] {
        &self.entries
    }

    pub fn apply(&self, alpha: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(alpha.dim(), (self.n_theta, self.n_rho));
        let flat: Vec<f64> = alpha.iter().copied().collect();
        let out = self
            .entries
            .iter()
            .map(|e| e.iter().map(|&(k, w)| w * flat[k]).sum())
            .collect();
        Array2::from_shape_vec((self.n_eta, self.n_eta), out).expect("n_eta^2 pixels")
    }

    /// Transpose of [`InterpMap::apply`].
    pub fn apply_transpose(&self, img: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(img.dim(), (self.n_eta, self.n_eta));
        let mut out = vec![0.0; self.n_theta * self.n_rho];
        for (e, &v) in self.entries.iter().zip(img.iter()) {
            for &(k, w) in e {
                out[k] += w * v;
            }
        }
        Array2::from_shape_vec((self.n_theta, self.n_rho), out).expect("polar grid")
    }
}

pub fn polar_to_cart(alpha: &PolarField<f64>, grids: &Grids) -> Array2<f64> {
    InterpMap::new(grids).apply(alpha.values.view())
}

/// Born operator and its adjoints at one frequency, with the plane-wave table
/// `A[m, y] = exp(-i omega r_m . y)` precomputed.
#[derive(Debug, Clone)]
pub struct BornOperator {
    grids: Grids,
    omega: f64,
    waves: Array2<Complex64>,
    kernel: Kernel,
}

impl BornOperator {
    pub fn new(omega: f64, grids: &Grids) -> Self {
        let n = grids.n_eta;
        let waves = Array2::from_shape_fn((grids.n_sc, n * n), |(m, p)| {
            let (cx, cy) = grids.direction(m);
            let (x, y) = (grids.pixel_center(p % n), grids.pixel_center(p / n));
            Complex64::from_polar(1.0, -omega * (cx * x + cy * y))
        });
        BornOperator {
            grids: *grids,
            omega,
            waves,
            kernel: Kernel::new(omega, grids),
        }
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn grids(&self) -> &Grids {
        &self.grids
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// `Lambda[m, n] = h^2 sum_y exp(-i omega (r_m - s_n) . y) eta(y)`.
    pub fn forward(&self, eta: ArrayView2<f64>) -> Array2<Complex64> {
        let n = self.grids.n_eta;
        assert_eq!(eta.dim(), (n, n));
        let h2 = self.grids.pixel_area();
        let flat: Vec<f64> = eta.iter().copied().collect();
        let mut weighted = self.waves.mapv(|z| z.conj());
        for mut row in weighted.rows_mut() {
            for (z, &e) in row.iter_mut().zip(&flat) {
                *z *= e * h2;
            }
        }
        self.waves.dot(&weighted.t())
    }

    /// Exact adjoint on the Cartesian grid,
    /// `(F^* Lambda)(y) = w sum_{m,n} exp(i omega (r_m - s_n) . y) Lambda[m, n]`.
    pub fn adjoint_cartesian(&self, lam: &Array2<Complex64>) -> Array2<Complex64> {
        let n = self.grids.n_eta;
        let b = lam.dot(&self.waves);
        let w = self.grids.angular_weight();
        let mut out = ndarray::Array1::from_elem(n * n, ZERO);
        Zip::from(self.waves.rows()).and(b.rows()).for_each(|a, b| {
            for ((o, &av), &bv) in out.iter_mut().zip(a.iter()).zip(b.iter()) {
                *o += av.conj() * bv;
            }
        });
        out.mapv(|v| v * w).into_shape_with_order((n, n)).expect("n_eta^2")
    }

    /// `P Re (F^*)` through Implementation II and quadratic interpolation.
    pub fn backproject(&self, lam: &Array2<Complex64>, interp: &InterpMap) -> Result<Array2<f64>> {
        let alpha = adjoint_impl2(lam, &self.kernel, &self.grids)?;
        Ok(interp.apply(alpha.values.mapv(|z| z.re).view()))
    }
}

/// The Born prediction for `medium` in the normalised convention.
pub fn apply_f(medium: &Medium, omega: f64, grids: &Grids) -> Result<FarField> {
    if medium.n_eta() != grids.n_eta {
        return Err(Error::shape(format!(
            "medium has n_eta = {}, grids expect {}",
            medium.n_eta(),
            grids.n_eta
        )));
    }
    Ok(FarField {
        values: BornOperator::new(omega, grids).forward(medium.values.view()),
        omega,
        receiver_radius: grids.receiver_radius,
        normalized: true,
    })
}

/// `sum_omega P Re F^* F eta` through the polar pipeline.
pub fn apply_normal(eta: &Array2<f64>, freqs: &FrequencySet, grids: &Grids) -> Result<Array2<f64>> {
    let interp = InterpMap::new(grids);
    let mut out = Array2::zeros(eta.dim());
    for w in freqs.omegas() {
        let op = BornOperator::new(w, grids);
        out += &op.backproject(&op.forward(eta.view()), &interp)?;
    }
    Ok(out)
}

/// `sum_omega Re F^* F eta` with the exact Cartesian adjoint (symmetric positive semidefinite).
pub fn apply_normal_exact(eta: &Array2<f64>, freqs: &FrequencySet, grids: &Grids) -> Array2<f64> {
    let mut out = Array2::zeros(eta.dim());
    for w in freqs.omegas() {
        let op = BornOperator::new(w, grids);
        out += &op.adjoint_cartesian(&op.forward(eta.view())).mapv(|z| z.re);
    }
    out
}

/// Which adjoint the filtered back-projection uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjointKind {
    /// Implementation II followed by polar-to-Cartesian interpolation.
    #[default]
    Polar,
    /// Exact adjoint evaluated directly at pixel centres.
    Cartesian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FbpConfig {
    /// Tikhonov weight; relative to the power-iteration estimate of the
    /// largest eigenvalue of `F^* F` when `epsilon_relative` is set.
    pub epsilon: f64,
    pub epsilon_relative: bool,
    pub power_iters: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub adjoint: AdjointKind,
}

impl Default for FbpConfig {
    fn default() -> Self {
        FbpConfig {
            epsilon: 1e-2,
            epsilon_relative: true,
            power_iters: 20,
            cg_tol: 1e-6,
            cg_max_iter: 500,
            adjoint: AdjointKind::Polar,
        }
    }
}

impl FbpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.cg_tol > 0.0) || self.cg_max_iter == 0 {
            return Err(Error::invalid("cg_tol must be positive and cg_max_iter non-zero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbpFrequencyReport {
    pub omega: f64,
    pub epsilon: f64,
    pub iterations: usize,
    /// `|(F^*F + eps) eta - F^* Lambda| / |F^* Lambda|` of the returned iterate.
    pub relative_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbpResult {
    pub eta: Array2<f64>,
    pub per_frequency: Vec<FbpFrequencyReport>,
}

impl FbpResult {
    pub fn converged(&self) -> bool {
        self.per_frequency.iter().all(|r| r.converged)
    }
}

struct NormalSystem<'a> {
    op: BornOperator,
    interp: &'a InterpMap,
    adjoint: AdjointKind,
}

impl NormalSystem<'_> {
    fn adjoint(&self, lam: &Array2<Complex64>) -> Result<Array2<f64>> {
        match self.adjoint {
            AdjointKind::Polar => self.op.backproject(lam, self.interp),
            AdjointKind::Cartesian => Ok(self.op.adjoint_cartesian(lam).mapv(|z| z.re)),
        }
    }

    fn normal(&self, eta: &Array2<f64>) -> Result<Array2<f64>> {
        self.adjoint(&self.op.forward(eta.view()))
    }
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &Array2<f64>) -> f64 {
    dot(a, a).sqrt()
}

/// Largest eigenvalue estimate of the normal operator by power iteration
/// from a fixed start vector.
fn power_estimate(sys: &NormalSystem<'_>, n: usize, steps: usize) -> Result<f64> {
    let mut v = Array2::from_elem((n, n), 1.0 / n as f64);
    let mut lambda = 0.0;
    for _ in 0..steps.max(1) {
        let av = sys.normal(&v)?;
        lambda = norm(&av);
        if lambda == 0.0 {
            return Ok(0.0);
        }
        v = av / lambda;
    }
    Ok(lambda)
}

/// Iterations without a new best residual before CG restarts from the best iterate.
const CG_STALL: usize = 10;

/// Conjugate gradients on `(N + eps I) x = b`; returns the iterate with the
/// smallest true residual seen. The polar normal operator is only nearly
/// symmetric, so a stalled recurrence is restarted from the best iterate.
fn conjugate_gradients(
    sys: &NormalSystem<'_>,
    b: &Array2<f64>,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Array2<f64>, usize, f64)> {
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((Array2::zeros(b.dim()), 0, 0.0));
    }
    let apply = |x: &Array2<f64>| -> Result<Array2<f64>> { Ok(sys.normal(x)? + &(x * eps)) };
    let mut x = Array2::zeros(b.dim());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut best = (x.clone(), 1.0, r.clone());
    let mut since_best = 0;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        let stalled = since_best >= CG_STALL || !(pap > 0.0);
        if stalled {
            if since_best == 0 {
                break;
            }
            x = best.0.clone();
            r = best.2.clone();
            p = r.clone();
            rr = dot(&r, &r);
            since_best = 0;
            continue;
        }
        let alpha = rr / pap;
        x.scaled_add(alpha, &p);
        // the true residual keeps the stopping test honest
        r = b - &apply(&x)?;
        let rel = norm(&r) / b_norm;
        if rel < best.1 {
            best = (x.clone(), rel, r.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if rel <= tol {
            break;
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p = &r + &(p * beta);
    }
    Ok((best.0, iterations, best.1))
}

/// Tikhonov-filtered back-projection: one CG solve of
/// `(F^* F + eps I) eta = F^* Lambda` per frequency, averaged over frequencies.
/// `data[k]` is the normalised far field at `freqs.omega(k)`.
pub fn fbp_reconstruct(
    data: &[Array2<Complex64>],
    freqs: &FrequencySet,
    grids: &Grids,
    config: &FbpConfig,
) -> Result<FbpResult> {
    config.validate()?;
    if data.len() != freqs.len() {
        return Err(Error::shape(format!(
            "{} far fields for {} frequencies",
            data.len(),
            freqs.len()
        )));
    }
    for lam in data {
        check_square(lam, grids)?;
    }
    let n = grids.n_eta;
    let interp = InterpMap::new(grids);
    let solved = par::try_map_range(freqs.len(), |k| -> Result<(Array2<f64>, FbpFrequencyReport)> {
        let sys = NormalSystem {
            op: BornOperator::new(freqs.omega(k), grids),
            interp: &interp,
            adjoint: config.adjoint,
        };
        let rhs = sys.adjoint(&data[k])?;
        let eps = if config.epsilon_relative {
            config.epsilon * power_estimate(&sys, n, config.power_iters)?
        } else {
            config.epsilon
        };
        let eps = if eps > 0.0 { eps } else { config.epsilon };
        let (eta, iterations, relative_residual) =
            conjugate_gradients(&sys, &rhs, eps, config.cg_tol, config.cg_max_iter)?;
        let converged = relative_residual <= config.cg_tol;
        if !converged {
            log::warn!(
                "FBP at omega = {:.3}: CG stopped at relative residual {relative_residual:.3e} after {iterations} iterations",
                freqs.omega(k)
            );
        }
        Ok((
            eta,
            FbpFrequencyReport {
                omega: freqs.omega(k),
                epsilon: eps,
                iterations,
                relative_residual,
                converged,
            },
        ))
    })?;
    let mut eta = Array2::zeros((n, n));
    let mut per_frequency = Vec::with_capacity(solved.len());
    for (e, report) in solved {
        eta += &e;
        per_frequency.push(report);
    }
    eta /= freqs.len() as f64;
    Ok(FbpResult { eta, per_frequency })
}
