//! Forward simulation of far-field data.
//!
//! The scattered field solves
//! `Delta u + omega^2 (1 + eta) u = -omega^2 eta exp(i omega s.x)`
//! on the box `[-1, 1]^2` surrounded by a perfectly matched layer. The medium
//! grid over `[-0.5, 0.5]^2` is refined `refine` times and embedded in the box;
//! the PML is attached outside the box, so the receiver circle always sits in
//! the physical part of the mesh.

mod banded;
pub mod store;

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use banded::{BandLu, BandMatrix};

use crate::error::{Error, Result};
use crate::grid::{FrequencySet, Grids};
use crate::media::Medium;
use crate::par;

/// Half-width of the computational box.
pub const COMP_HALF_WIDTH: f64 = 1.0;
/// Points per wavelength below which a warning is logged.
pub const MIN_PPW: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HelmholtzConfig {
    /// Computational nodes per medium pixel along each axis.
    pub refine: usize,
    /// PML thickness in computational nodes.
    pub pml_width: usize,
    pub pml_order: i32,
    pub pml_intensity: f64,
    /// Relative residual bound `|A u - b| / |b|`.
    pub solver_tol: f64,
    /// Maximum iterative-refinement sweeps after the direct solve.
    pub max_refinements: usize,
}

impl Default for HelmholtzConfig {
    fn default() -> Self {
        HelmholtzConfig {
            refine: 2,
            pml_width: 20,
            pml_order: 2,
            pml_intensity: 80.0,
            solver_tol: 1e-8,
            max_refinements: 3,
        }
    }
}

impl HelmholtzConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pml_width < 10 {
            return Err(Error::invalid(format!("pml_width {} < 10", self.pml_width)));
        }
        if self.refine == 0 {
            return Err(Error::invalid("refine must be at least 1"));
        }
        if self.pml_order < 1 || !(self.pml_intensity >= 0.0) {
            return Err(Error::invalid("PML order must be >= 1 and intensity >= 0"));
        }
        if !(self.solver_tol > 0.0 && self.solver_tol < 1.0) {
            return Err(Error::invalid(format!("solver_tol {} outside (0, 1)", self.solver_tol)));
        }
        Ok(())
    }
}

/// Node layout of the computational mesh for a given medium resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CompGrid {
    pub n_eta: usize,
    pub refine: usize,
    pub pml: usize,
    /// Nodes across the physical box.
    pub n_interior: usize,
    /// Nodes per axis including both PML strips.
    pub n_tot: usize,
    pub h: f64,
    /// First interior node covered by the medium.
    pub medium_offset: usize,
}

impl CompGrid {
    pub fn new(n_eta: usize, config: &HelmholtzConfig) -> Result<Self> {
        config.validate()?;
        let fine = n_eta * config.refine;
        if fine % 2 != 0 {
            return Err(Error::invalid(format!(
                "n_eta * refine = {fine} must be even to centre the medium on the mesh"
            )));
        }
        let n_interior = 2 * fine;
        Ok(CompGrid {
            n_eta,
            refine: config.refine,
            pml: config.pml_width,
            n_interior,
            n_tot: n_interior + 2 * config.pml_width,
            h: 2.0 * COMP_HALF_WIDTH / n_interior as f64,
            medium_offset: fine / 2,
        })
    }

    pub fn coord(&self, k: usize) -> f64 {
        -COMP_HALF_WIDTH + (k as f64 - self.pml as f64 + 0.5) * self.h
    }

    pub fn unknowns(&self) -> usize {
        self.n_tot * self.n_tot
    }

    /// Points per wavelength at angular frequency `omega`.
    pub fn ppw(&self, omega: f64) -> f64 {
        2.0 * PI / (omega * self.h)
    }

    /// Piecewise-constant embedding of the medium into the mesh.
    pub fn embed(&self, medium: &Medium) -> Result<Array2<f64>> {
        if medium.n_eta() != self.n_eta {
            return Err(Error::shape(format!(
                "medium has n_eta = {}, mesh expects {}",
                medium.n_eta(),
                self.n_eta
            )));
        }
        let start = self.pml + self.medium_offset;
        let end = start + self.n_eta * self.refine;
        Ok(Array2::from_shape_fn((self.n_tot, self.n_tot), |(ky, kx)| {
            if (start..end).contains(&ky) && (start..end).contains(&kx) {
                medium.values[[(ky - start) / self.refine, (kx - start) / self.refine]]
            } else {
                0.0
            }
        }))
    }

    /// Bilinear weights of the four nodes surrounding `(x, y)`.
    pub fn bilinear(&self, x: f64, y: f64) -> Result<[(usize, f64); 4]> {
        let x0 = self.coord(0);
        let fx = (x - x0) / self.h;
        let fy = (y - x0) / self.h;
        let max = (self.n_tot - 1) as f64;
        if !(fx >= 0.0 && fy >= 0.0 && fx < max && fy < max) {
            return Err(Error::invalid(format!("point ({x}, {y}) outside the mesh")));
        }
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let n = self.n_tot;
        Ok([
            (iy * n + ix, (1.0 - tx) * (1.0 - ty)),
            (iy * n + ix + 1, tx * (1.0 - ty)),
            ((iy + 1) * n + ix, (1.0 - tx) * ty),
            ((iy + 1) * n + ix + 1, tx * ty),
        ])
    }

    fn pml_sigma(&self, x: f64, config: &HelmholtzConfig) -> f64 {
        let depth = (-COMP_HALF_WIDTH - x).max(x - COMP_HALF_WIDTH).max(0.0);
        let width = self.pml as f64 * self.h;
        config.pml_intensity * (depth / width).powi(config.pml_order)
    }
}

/// Whether the contrast enters the operator (full problem) or only the source
/// (first-order Born solution on the same mesh).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scattering {
    #[default]
    Full,
    Linearized,
}

/// Factorised discrete Helmholtz operator for one `(medium, omega)` pair;
/// reused for every incident direction.
pub struct HelmholtzOperator {
    grid: CompGrid,
    omega: f64,
    lower: Vec<Complex64>,
    main: Vec<Complex64>,
    upper: Vec<Complex64>,
    diag: Vec<Complex64>,
    eta: Array2<f64>,
    lu: BandLu,
    tol: f64,
    max_refinements: usize,
}

impl HelmholtzOperator {
    pub fn new(medium: &Medium, omega: f64, config: &HelmholtzConfig, scattering: Scattering) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::invalid(format!("omega must be positive, got {omega}")));
        }
        let grid = CompGrid::new(medium.n_eta(), config)?;
        let ppw = grid.ppw(omega);
        if ppw < MIN_PPW {
            log::warn!("only {ppw:.2} points per wavelength at omega = {omega:.3}");
        }
        let n = grid.n_tot;
        let h2 = grid.h * grid.h;
        let stretch = |x: f64| Complex64::new(1.0, grid.pml_sigma(x, config) / omega);
        let node: Vec<Complex64> = (0..n).map(|k| stretch(grid.coord(k))).collect();
        // half nodes k - 1/2 for k = 0..=n
        let half: Vec<Complex64> = (0..=n).map(|k| stretch(grid.coord(k) - 0.5 * grid.h)).collect();
        let lower: Vec<Complex64> = (0..n).map(|k| 1.0 / (node[k] * half[k] * h2)).collect();
        let upper: Vec<Complex64> = (0..n).map(|k| 1.0 / (node[k] * half[k + 1] * h2)).collect();
        let main: Vec<Complex64> = (0..n).map(|k| -(lower[k] + upper[k])).collect();
        let eta = grid.embed(medium)?;
        let w2 = omega * omega;
        let diag: Vec<Complex64> = eta
            .iter()
            .map(|&e| match scattering {
                Scattering::Full => Complex64::new(w2 * (1.0 + e), 0.0),
                Scattering::Linearized => Complex64::new(w2, 0.0),
            })
            .collect();

        let mut a = BandMatrix::zeros(n * n, n);
        for ky in 0..n {
            for kx in 0..n {
                let p = ky * n + kx;
                a.set(p, p, main[kx] + main[ky] + diag[p]);
                if kx > 0 {
                    a.set(p, p - 1, lower[kx]);
                }
                if kx + 1 < n {
                    a.set(p, p + 1, upper[kx]);
                }
                if ky > 0 {
                    a.set(p, p - n, lower[ky]);
                }
                if ky + 1 < n {
                    a.set(p, p + n, upper[ky]);
                }
            }
        }
        let lu = BandLu::factorize(a)?;
        Ok(HelmholtzOperator {
            grid,
            omega,
            lower,
            main,
            upper,
            diag,
            eta,
            lu,
            tol: config.solver_tol,
            max_refinements: config.max_refinements,
        })
    }

    pub fn grid(&self) -> &CompGrid {
        &self.grid
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Matrix-free application of the discrete operator.
    pub fn apply(&self, u: &[Complex64]) -> Vec<Complex64> {
        let n = self.grid.n_tot;
        assert_eq!(u.len(), n * n);
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for ky in 0..n {
            for kx in 0..n {
                let p = ky * n + kx;
                let mut acc = (self.main[kx] + self.main[ky] + self.diag[p]) * u[p];
                if kx > 0 {
                    acc += self.lower[kx] * u[p - 1];
                }
                if kx + 1 < n {
                    acc += self.upper[kx] * u[p + 1];
                }
                if ky > 0 {
                    acc += self.lower[ky] * u[p - n];
                }
                if ky + 1 < n {
                    acc += self.upper[ky] * u[p + n];
                }
                out[p] = acc;
            }
        }
        out
    }

    /// `-omega^2 eta exp(i omega s.x)` for the unit direction `s`.
    pub fn source(&self, direction: (f64, f64)) -> Vec<Complex64> {
        let n = self.grid.n_tot;
        let w = self.omega;
        let mut b = vec![Complex64::new(0.0, 0.0); n * n];
        for ((ky, kx), &e) in self.eta.indexed_iter() {
            if e != 0.0 {
                let phase = w * (direction.0 * self.grid.coord(kx) + direction.1 * self.grid.coord(ky));
                b[ky * n + kx] = -w * w * e * Complex64::from_polar(1.0, phase);
            }
        }
        b
    }

    /// Direct solve followed by iterative refinement until the relative
    /// residual meets the tolerance. Returns the solution and its residual.
    pub fn solve(&self, b: &[Complex64]) -> Result<(Vec<Complex64>, f64)> {
        let b_norm = l2(b);
        if b_norm == 0.0 {
            return Ok((vec![Complex64::new(0.0, 0.0); b.len()], 0.0));
        }
        let mut u = b.to_vec();
        self.lu.solve_in_place(&mut u);
        let mut residual = f64::INFINITY;
        for step in 0..=self.max_refinements {
            let mut r: Vec<Complex64> = b.iter().zip(self.apply(&u)).map(|(bi, ai)| bi - ai).collect();
            residual = l2(&r) / b_norm;
            if residual <= self.tol || step == self.max_refinements {
                break;
            }
            self.lu.solve_in_place(&mut r);
            for (ui, di) in u.iter_mut().zip(&r) {
                *ui += di;
            }
        }
        if !(residual <= self.tol) {
            return Err(Error::SolverDivergence {
                residual,
                tol: self.tol,
            });
        }
        Ok((u, residual))
    }

    pub fn solve_direction(&self, angle: f64) -> Result<Field> {
        let b = self.source((angle.cos(), angle.sin()));
        let (u, residual) = self.solve(&b)?;
        let n = self.grid.n_tot;
        Ok(Field {
            values: Array2::from_shape_vec((n, n), u).expect("n_tot^2 values"),
            omega: self.omega,
            source_angle: angle,
            residual,
        })
    }

    /// Bilinear samples of `field` on the circle of radius `radius` at the given angles.
    pub fn sample_circle(&self, field: &Field, radius: f64, angles: &[f64]) -> Result<Vec<Complex64>> {
        let flat = field.values.as_slice().expect("standard layout");
        angles
            .iter()
            .map(|&t| {
                let w = self.grid.bilinear(radius * t.cos(), radius * t.sin())?;
                Ok(w.iter().map(|&(p, c)| flat[p] * c).sum())
            })
            .collect()
    }
}

fn l2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Scattered field on the whole computational mesh (PML included).
#[derive(Debug, Clone)]
pub struct Field {
    pub values: Array2<Complex64>,
    pub omega: f64,
    pub source_angle: f64,
    /// Achieved relative residual.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarField {
    /// Rows are receiver angles, columns source angles.
    pub values: Array2<Complex64>,
    pub omega: f64,
    pub receiver_radius: f64,
    pub normalized: bool,
}

/// `C_nor = e^{i pi/4} / sqrt(8 pi omega) * omega^2 * e^{i omega R} / sqrt(R)`.
pub fn c_nor(omega: f64, receiver_radius: f64) -> Complex64 {
    Complex64::from_polar(1.0, PI / 4.0) / (8.0 * PI * omega).sqrt()
        * omega
        * omega
        * Complex64::from_polar(1.0, omega * receiver_radius)
        / receiver_radius.sqrt()
}

impl FarField {
    pub fn n_sc(&self) -> usize {
        self.values.nrows()
    }

    pub fn normalize(&self) -> Result<FarField> {
        if self.normalized {
            return Err(Error::DoubleNormalization);
        }
        let c = c_nor(self.omega, self.receiver_radius);
        Ok(FarField {
            values: self.values.mapv(|v| v / c),
            normalized: true,
            ..self.clone()
        })
    }

    pub fn denormalize(&self) -> Result<FarField> {
        if !self.normalized {
            return Err(Error::NotNormalized);
        }
        let c = c_nor(self.omega, self.receiver_radius);
        Ok(FarField {
            values: self.values.mapv(|v| v * c),
            normalized: false,
            ..self.clone()
        })
    }
}

pub fn normalize(ff: &FarField) -> Result<FarField> {
    ff.normalize()
}

/// Scattered field for incident direction `s_index` of the `n_sc` mesh.
pub fn solve_scattered(
    medium: &Medium,
    omega: f64,
    s_index: usize,
    grids: &Grids,
    config: &HelmholtzConfig,
) -> Result<Field> {
    let op = HelmholtzOperator::new(medium, omega, config, Scattering::Full)?;
    op.solve_direction(grids.angle(s_index % grids.n_sc))
}

/// Unnormalised far-field matrix: one factorisation, `n_sc` solves.
pub fn far_field(medium: &Medium, omega: f64, grids: &Grids, config: &HelmholtzConfig) -> Result<FarField> {
    far_field_with(medium, omega, grids, config, Scattering::Full)
}

pub fn far_field_with(
    medium: &Medium,
    omega: f64,
    grids: &Grids,
    config: &HelmholtzConfig,
    scattering: Scattering,
) -> Result<FarField> {
    if grids.receiver_radius >= COMP_HALF_WIDTH {
        return Err(Error::invalid(format!(
            "receiver radius {} must lie inside the computational box",
            grids.receiver_radius
        )));
    }
    let n_sc = grids.n_sc;
    let angles: Vec<f64> = (0..n_sc).map(|j| grids.angle(j)).collect();
    let op = HelmholtzOperator::new(medium, omega, config, scattering)?;
    let columns = par::try_map_range(n_sc, |n| {
        let field = op.solve_direction(angles[n])?;
        op.sample_circle(&field, grids.receiver_radius, &angles)
    })?;
    let values = Array2::from_shape_fn((n_sc, n_sc), |(m, n)| columns[n][m]);
    Ok(FarField {
        values,
        omega,
        receiver_radius: grids.receiver_radius,
        normalized: false,
    })
}

/// Normalised far fields of many media at several frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct WideBandDataset {
    pub grids: Grids,
    pub freqs: FrequencySet,
    pub media: Vec<Medium>,
    /// One `[N, n_sc, n_sc]` array per frequency.
    pub data: Vec<Array3<Complex64>>,
}

impl WideBandDataset {
    pub fn len(&self) -> usize {
        self.media.len()
    }

    pub fn is_empty(&self) -> bool {
        self.media.is_empty()
    }

    /// The normalised far field of sample `i` at frequency index `k`.
    pub fn sample(&self, i: usize, k: usize) -> Array2<Complex64> {
        self.data[k].index_axis(ndarray::Axis(0), i).to_owned()
    }

    pub fn select(&self, indices: &[usize]) -> WideBandDataset {
        WideBandDataset {
            grids: self.grids,
            freqs: self.freqs.clone(),
            media: indices.iter().map(|&i| self.media[i].clone()).collect(),
            data: self.data.iter().map(|d| d.select(ndarray::Axis(0), indices)).collect(),
        }
    }
}

/// Simulates every `(medium, frequency)` pair; the first failing sample aborts
/// the run and is reported by index.
pub fn simulate_dataset(
    media: &[Medium],
    freqs: &FrequencySet,
    grids: &Grids,
    config: &HelmholtzConfig,
) -> Result<WideBandDataset> {
    for (i, m) in media.iter().enumerate() {
        if m.n_eta() != grids.n_eta {
            return Err(Error::shape(format!(
                "medium {i} has n_eta = {}, expected {}",
                m.n_eta(),
                grids.n_eta
            )));
        }
    }
    let n_f = freqs.len();
    let n_sc = grids.n_sc;
    let results = par::try_map_range(media.len() * n_f, |t| {
        let (i, k) = (t / n_f, t % n_f);
        far_field(&media[i], freqs.omega(k), grids, config)
            .and_then(|ff| ff.normalize())
            .map_err(|e| Error::Sample {
                index: i,
                source: Box::new(e),
            })
    })?;
    let mut data = vec![Array3::<Complex64>::zeros((media.len(), n_sc, n_sc)); n_f];
    for (t, ff) in results.into_iter().enumerate() {
        let (i, k) = (t / n_f, t % n_f);
        data[k].index_axis_mut(ndarray::Axis(0), i).assign(&ff.values);
    }
    Ok(WideBandDataset {
        grids: *grids,
        freqs: freqs.clone(),
        media: media.to_vec(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{rotate_medium, Family};

    fn small_config() -> HelmholtzConfig {
        HelmholtzConfig {
            refine: 2,
            pml_width: 10,
            ..HelmholtzConfig::default()
        }
    }

    fn pixel_medium(n: usize, a: f64) -> Medium {
        let mut v = Array2::zeros((n, n));
        v[[n / 2, n / 2]] = a;
        Medium::from_values(v, Family::Custom).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(HelmholtzConfig { pml_width: 9, ..Default::default() }.validate().is_err());
        assert!(CompGrid::new(7, &HelmholtzConfig { refine: 1, ..Default::default() }).is_err());
        let g = CompGrid::new(8, &small_config()).unwrap();
        assert_eq!(g.n_interior, 32);
        assert_eq!(g.n_tot, 52);
        assert!((g.coord(g.pml) + 1.0 - 0.5 * g.h).abs() < 1e-15);
        assert!((g.coord(g.n_tot - 1 - g.pml) - 1.0 + 0.5 * g.h).abs() < 1e-15);
    }

    #[test]
    fn embedding_is_centred() {
        let mut v = Array2::zeros((8, 8));
        v[[1, 2]] = 0.3;
        let m = Medium::from_values(v, Family::Custom).unwrap();
        let g = CompGrid::new(8, &small_config()).unwrap();
        let e = g.embed(&m).unwrap();
        let hits: Vec<(usize, usize)> = e.indexed_iter().filter(|(_, &x)| x != 0.0).map(|(i, _)| i).collect();
        assert_eq!(hits.len(), 4);
        for (ky, kx) in hits {
            // node centres fall inside pixel (1, 2) of the medium
            let (x, y) = (g.coord(kx), g.coord(ky));
            assert!(x > -0.5 + 2.0 / 8.0 && x < -0.5 + 3.0 / 8.0);
            assert!(y > -0.5 + 1.0 / 8.0 && y < -0.5 + 2.0 / 8.0);
        }
    }

    #[test]
    fn zero_medium_gives_zero_field() {
        let m = Medium::zeros(8, Family::Custom);
        let grids = Grids::square(8).unwrap();
        let f = solve_scattered(&m, 2.0 * PI, 0, &grids, &small_config()).unwrap();
        assert!(f.values.iter().all(|v| v.norm() == 0.0));
        let ff = far_field(&m, 2.0 * PI, &grids, &small_config()).unwrap();
        assert_eq!(ff.values.dim(), (8, 8));
        assert!(ff.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn residual_contract_holds() {
        let m = pixel_medium(8, 0.2);
        let grids = Grids::square(8).unwrap();
        let cfg = small_config();
        let op = HelmholtzOperator::new(&m, 2.0 * PI, &cfg, Scattering::Full).unwrap();
        let f = op.solve_direction(grids.angle(3)).unwrap();
        let b = op.source((grids.angle(3).cos(), grids.angle(3).sin()));
        let r: Vec<Complex64> = op
            .apply(f.values.as_slice().unwrap())
            .iter()
            .zip(&b)
            .map(|(a, b)| a - b)
            .collect();
        assert!(l2(&r) / l2(&b) <= cfg.solver_tol);
        assert!(f.residual <= cfg.solver_tol);
    }

    #[test]
    fn far_field_scales_linearly_for_weak_scatterers() {
        let grids = Grids::square(8).unwrap();
        let cfg = small_config();
        let w = 2.0 * PI;
        let a = far_field(&pixel_medium(8, 0.01), w, &grids, &cfg).unwrap();
        let b = far_field(&pixel_medium(8, 0.005), w, &grids, &cfg).unwrap();
        let na = a.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let nb = b.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!((na / nb - 2.0).abs() < 0.1, "ratio {}", na / nb);
    }

    #[test]
    fn quarter_turn_symmetry() {
        let grids = Grids::square(8).unwrap();
        let cfg = small_config();
        let mut v = Array2::zeros((8, 8));
        v[[3, 5]] = 0.2;
        v[[2, 2]] = -0.1;
        v[[5, 4]] = 0.15;
        let m = Medium::from_values(v, Family::Custom).unwrap();
        let r = rotate_medium(&m, 1).unwrap();
        let w = 2.0 * PI * 1.5;
        let base = far_field(&m, w, &grids, &cfg).unwrap().values;
        let rot = far_field(&r, w, &grids, &cfg).unwrap().values;
        let q = grids.n_sc / 4;
        let scale = base.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for mi in 0..8 {
            for ni in 0..8 {
                let d = (rot[[(mi + q) % 8, (ni + q) % 8]] - base[[mi, ni]]).norm();
                assert!(d <= cfg.solver_tol * 100.0 * scale, "{d}");
            }
        }
    }

    #[test]
    fn normalisation_constant() {
        let w = 20.0 * PI;
        let c = c_nor(w, 0.9);
        let expect = w * w / ((8.0 * PI * w).sqrt() * 0.9f64.sqrt());
        assert!((c.norm() - expect).abs() <= 1e-12 * expect);
        let ff = FarField {
            values: Array2::from_elem((2, 2), Complex64::new(0.3, -1.2)),
            omega: w,
            receiver_radius: 0.9,
            normalized: false,
        };
        let n = ff.normalize().unwrap();
        assert!(matches!(n.normalize(), Err(Error::DoubleNormalization)));
        let back = n.denormalize().unwrap();
        for (a, b) in back.values.iter().zip(&ff.values) {
            assert!((a - b).norm() <= 4.0 * f64::EPSILON * b.norm());
        }
        let zero = FarField {
            values: Array2::zeros((3, 3)),
            ..ff
        };
        assert!(zero.normalize().unwrap().values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn dataset_shapes_and_determinism() {
        let grids = Grids::square(8).unwrap();
        let freqs = FrequencySet::new(vec![0.5, 1.0]).unwrap();
        let m = pixel_medium(8, 0.1);
        let ds = simulate_dataset(&[m.clone(), m], &freqs, &grids, &small_config()).unwrap();
        assert_eq!(ds.data.len(), 2);
        assert_eq!(ds.data[0].dim(), (2, 8, 8));
        assert_eq!(ds.sample(0, 1), ds.sample(1, 1));
        let bad = Medium::zeros(6, Family::Custom);
        assert!(simulate_dataset(&[bad], &freqs, &grids, &small_config()).is_err());
    }
}
