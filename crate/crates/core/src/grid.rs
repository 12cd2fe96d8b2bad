//! Spatial discretization and the two state containers defined on it.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const HERMITICITY_TOLERANCE: f64 = 1e-10;
pub const TRACE_TOLERANCE: f64 = 1e-8;
pub const NORM_TOLERANCE: f64 = 1e-10;

/// Uniform periodic grid on `[-L/2, L/2)`, shared by both axes of a
/// density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    n_points: usize,
    extent: f64,
}

impl SpatialGrid {
    pub fn new(n_points: usize, extent: f64) -> Result<Self> {
        if n_points < 16 || !n_points.is_power_of_two() {
            return Err(Error::config(
                "grid.n_points",
                format!("must be a power of two >= 16, got {n_points}"),
            ));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::config("grid.extent", format!("must be positive, got {extent}")));
        }
        Ok(Self { n_points, extent })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Exact for power-of-two sizes: `spacing * n_points == extent`.
    pub fn spacing(&self) -> f64 {
        self.extent / self.n_points as f64
    }

    pub fn position(&self, i: usize) -> f64 {
        -0.5 * self.extent + i as f64 * self.spacing()
    }

    pub fn positions(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.n_points, |i| self.position(i))
    }

    /// Angular wavenumber of DFT bin `i` in standard FFT ordering.
    pub fn wavenumber(&self, i: usize) -> f64 {
        let n = self.n_points as isize;
        let i = i as isize;
        let m = if i < n / 2 { i } else { i - n };
        2.0 * std::f64::consts::PI * m as f64 / self.extent
    }

    pub fn wavenumbers(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.n_points, |i| self.wavenumber(i))
    }

    pub fn nyquist_wavenumber(&self) -> f64 {
        std::f64::consts::PI / self.spacing()
    }

    /// Index of the grid point closest to `x`, if `x` lies on the grid.
    pub fn nearest_index(&self, x: f64) -> Option<usize> {
        let s = (x + 0.5 * self.extent) / self.spacing();
        let i = s.round();
        (i >= 0.0 && i < self.n_points as f64).then_some(i as usize)
    }
}

/// Sampled wavefunction `ψ(x_i)`, units m^(-1/2).
#[derive(Debug, Clone, PartialEq)]
pub struct WavefunctionGrid {
    pub grid: SpatialGrid,
    pub amplitudes: Array1<C64>,
}

impl WavefunctionGrid {
    pub fn new(grid: SpatialGrid, amplitudes: Array1<C64>) -> Result<Self> {
        if amplitudes.len() != grid.n_points() {
            return Err(Error::Format(format!(
                "wavefunction has {} samples, grid has {}",
                amplitudes.len(),
                grid.n_points()
            )));
        }
        Ok(Self { grid, amplitudes })
    }

    /// `Σ |ψ|² dx`.
    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.spacing()
    }

    /// `Σ conj(self) other dx`.
    pub fn inner(&self, other: &WavefunctionGrid) -> C64 {
        self.amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            * self.grid.spacing()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let norm = self.norm_squared().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::domain("cannot normalize a zero wavefunction"));
        }
        self.amplitudes.mapv_inplace(|a| a / norm);
        Ok(self)
    }

    pub fn position_mean(&self) -> f64 {
        let dx = self.grid.spacing();
        (0..self.grid.n_points())
            .map(|i| self.grid.position(i) * self.amplitudes[i].norm_sqr())
            .sum::<f64>()
            * dx
            / self.norm_squared()
    }

    pub fn position_variance(&self) -> f64 {
        let mean = self.position_mean();
        let dx = self.grid.spacing();
        (0..self.grid.n_points())
            .map(|i| (self.grid.position(i) - mean).powi(2) * self.amplitudes[i].norm_sqr())
            .sum::<f64>()
            * dx
            / self.norm_squared()
    }
}

/// Density matrix `ρ(x_i, y_j)` on a grid, units 1/m.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub grid: SpatialGrid,
    pub values: Array2<C64>,
}

impl DensityGrid {
    pub fn new(grid: SpatialGrid, values: Array2<C64>) -> Result<Self> {
        let n = grid.n_points();
        if values.dim() != (n, n) {
            return Err(Error::Format(format!(
                "density matrix is {:?}, grid needs ({n}, {n})",
                values.dim()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: SpatialGrid) -> Self {
        let n = grid.n_points();
        Self {
            grid,
            values: Array2::zeros((n, n)),
        }
    }

    /// `Σ ρ(x_i, x_i) dx` (complex; the imaginary part is a diagnostic).
    pub fn trace(&self) -> C64 {
        self.values.diag().sum() * self.grid.spacing()
    }

    /// Largest `|ρ(i,j) − conj ρ(j,i)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.grid.n_points();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                let d = (self.values[[i, j]] - self.values[[j, i]].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Check Hermiticity and unit trace.
    pub fn check_invariants(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > HERMITICITY_TOLERANCE {
            return Err(Error::Diagnostic(format!("density matrix not Hermitian: {herm:.3e}")));
        }
        let trace = self.trace();
        if (trace - 1.0).norm() > TRACE_TOLERANCE {
            return Err(Error::Diagnostic(format!("density matrix trace {trace} != 1")));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> Array1<f64> {
        self.values.diag().mapv(|z| z.re)
    }

    /// Largest entrywise modulus of `self − other`.
    pub fn max_abs_diff(&self, other: &DensityGrid) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `∫∫ |ρ| dx dy`.
    pub fn l1_norm(&self) -> f64 {
        let dx = self.grid.spacing();
        self.values.iter().map(|z| z.norm()).sum::<f64>() * dx * dx
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.values.mapv_inplace(|z| z * factor);
        self
    }

    /// Entrywise sum; both operands must live on the same grid.
    pub fn add(&self, other: &DensityGrid) -> Result<DensityGrid> {
        if self.grid != other.grid {
            return Err(Error::domain("cannot add densities on different grids"));
        }
        Ok(DensityGrid {
            grid: self.grid,
            values: &self.values + &other.values,
        })
    }
}
