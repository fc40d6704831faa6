//! Angular, polar and Cartesian sampling shared by every stage of the pipeline.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling of directions, the polar image grid and the Cartesian medium grid.
///
/// Sources, receivers and polar angles share the mesh `2*pi*j/n_sc`. Polar radii
/// are `i / (2*n_rho)`, so the radial grid covers `[0, 1/2)`. The medium lives on
/// an `n_eta x n_eta` pixel grid over `[-0.5, 0.5]^2`; receivers sit on a circle
/// of radius `receiver_radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub n_sc: usize,
    pub n_eta: usize,
    pub n_rho: usize,
    pub receiver_radius: f64,
}

pub const DEFAULT_RECEIVER_RADIUS: f64 = 0.9;

impl Grids {
    pub fn new(n_sc: usize, n_eta: usize, n_rho: usize, receiver_radius: f64) -> Result<Self> {
        if n_sc < 2 || n_eta < 2 || n_rho < 3 {
            return Err(Error::invalid(format!(
                "grid sizes too small: n_sc={n_sc}, n_eta={n_eta}, n_rho={n_rho} (need n_sc, n_eta >= 2, n_rho >= 3)"
            )));
        }
        if !(receiver_radius > 0.5) || !receiver_radius.is_finite() {
            return Err(Error::invalid(format!(
                "receiver radius {receiver_radius} must exceed 1/2"
            )));
        }
        Ok(Grids {
            n_sc,
            n_eta,
            n_rho,
            receiver_radius,
        })
    }

    /// `n_sc = n_eta = n_rho = n` with the default receiver radius.
    pub fn square(n: usize) -> Result<Self> {
        Grids::new(n, n, n, DEFAULT_RECEIVER_RADIUS)
    }

    pub fn n_theta(&self) -> usize {
        self.n_sc
    }

    /// Angle of direction index `j` (sources, receivers and polar angles alike).
    pub fn angle(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.n_sc as f64
    }

    pub fn angular_step(&self) -> f64 {
        2.0 * PI / self.n_sc as f64
    }

    /// Weight of one node in the double angular integral, `(2*pi/n_sc)^2`.
    pub fn angular_weight(&self) -> f64 {
        self.angular_step().powi(2)
    }

    pub fn rho(&self, i: usize) -> f64 {
        i as f64 * self.rho_step()
    }

    pub fn rho_step(&self) -> f64 {
        0.5 / self.n_rho as f64
    }

    pub fn rho_max(&self) -> f64 {
        self.rho(self.n_rho - 1)
    }

    /// Pixel size of the medium grid.
    pub fn pixel_size(&self) -> f64 {
        1.0 / self.n_eta as f64
    }

    /// Cartesian weight `h^2`.
    pub fn pixel_area(&self) -> f64 {
        self.pixel_size().powi(2)
    }

    /// Coordinate of pixel centre `k` along either axis.
    pub fn pixel_center(&self, k: usize) -> f64 {
        -0.5 + (k as f64 + 0.5) * self.pixel_size()
    }

    pub fn direction(&self, j: usize) -> (f64, f64) {
        let a = self.angle(j);
        (a.cos(), a.sin())
    }
}

/// Ordered set of source frequencies in Hz (background speed 1), `omega = 2*pi*f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FrequencySet {
    freqs: Vec<f64>,
}

impl TryFrom<Vec<f64>> for FrequencySet {
    type Error = Error;
    fn try_from(freqs: Vec<f64>) -> Result<Self> {
        FrequencySet::new(freqs)
    }
}

impl From<FrequencySet> for Vec<f64> {
    fn from(f: FrequencySet) -> Self {
        f.freqs
    }
}

impl FrequencySet {
    pub fn new(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::invalid("frequency set is empty"));
        }
        if freqs.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::invalid(format!("frequencies must be positive: {freqs:?}")));
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "frequencies must be strictly increasing: {freqs:?}"
            )));
        }
        Ok(FrequencySet { freqs })
    }

    /// `count` frequencies doubling up to `top`.
    pub fn dyadic(top: f64, count: usize) -> Result<Self> {
        let freqs = (0..count)
            .map(|k| top / f64::powi(2.0, (count - 1 - k) as i32))
            .collect();
        FrequencySet::new(freqs)
    }

    /// The 2.5/5/10 Hz triple of the 80-direction setup, rescaled to `n_sc`
    /// directions so the points-per-wavelength ratio is preserved.
    pub fn scaled_default(n_sc: usize) -> Self {
        let scale = n_sc as f64 / 80.0;
        FrequencySet::new(vec![2.5 * scale, 5.0 * scale, 10.0 * scale])
            .expect("scaled defaults are valid")
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn omega(&self, k: usize) -> f64 {
        omega(self.freqs[k])
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.freqs.iter().map(|&f| omega(f)).collect()
    }

    pub fn top(&self) -> f64 {
        *self.freqs.last().expect("non-empty")
    }

    pub fn subset(&self, wanted: &[f64]) -> Result<Self> {
        for f in wanted {
            if !self.freqs.iter().any(|g| (g - f).abs() <= 1e-9 * g.abs()) {
                return Err(Error::invalid(format!("frequency {f} not in {:?}", self.freqs)));
            }
        }
        FrequencySet::new(wanted.to_vec())
    }

    pub fn index_of(&self, f: f64) -> Option<usize> {
        self.freqs.iter().position(|g| (g - f).abs() <= 1e-9 * g.abs())
    }
}

pub fn omega(freq: f64) -> f64 {
    2.0 * PI * freq
}
