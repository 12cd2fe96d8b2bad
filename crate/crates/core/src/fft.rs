//! Row-parallel spectral kernels on square complex matrices.
//!
//! Matrices are stored row-major; every 2-D operation is built from
//! independent per-row transforms and square transposes, so results do not
//! depend on how rows are scheduled across threads.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::grid::{SpatialGrid, C64};

/// Planned forward/inverse transforms for one grid size.
#[derive(Clone)]
pub struct Spectral {
    grid: SpatialGrid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: SpatialGrid) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.n_points();
        Self {
            grid,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    fn n(&self) -> usize {
        self.grid.n_points()
    }

    /// Unnormalized DFT of every row.
    pub fn rows(&self, data: &mut [C64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        let n = self.n();
        let scratch_len = plan.get_inplace_scratch_len();
        data.par_chunks_mut(n).for_each_init(
            || vec![C64::new(0.0, 0.0); scratch_len],
            |scratch, row| plan.process_with_scratch(row, scratch),
        );
    }

    /// Multiply the spectrum of each row `i` by `e^{i k s_i}`, i.e. replace
    /// `f_i(y)` by its band-limited interpolant at `y + s_i`.
    pub fn shift_rows(&self, data: &mut [C64], shifts: &[f64]) {
        let n = self.n();
        debug_assert_eq!(shifts.len() * n, data.len());
        let k: Vec<f64> = (0..n).map(|j| self.grid.wavenumber(j)).collect();
        let norm = 1.0 / n as f64;
        self.rows(data, false);
        data.par_chunks_mut(n).zip(shifts.par_iter()).for_each(|(row, &s)| {
            for (j, z) in row.iter_mut().enumerate() {
                // The Nyquist bin is shared by ±k; its symmetric part is a cosine.
                let factor = if j == n / 2 {
                    C64::new((k[j] * s).cos(), 0.0)
                } else {
                    C64::from_polar(1.0, k[j] * s)
                };
                *z *= factor * norm;
            }
        });
        self.rows(data, true);
    }

    /// Replace each row `f(y)` by `f(c·y)` with `y` measured from the
    /// centre of the box, using band-limited interpolation.
    pub fn scale_rows(&self, data: &mut Array2<C64>, factor: f64) {
        let kernel = self.interpolation_matrix(factor);
        let re = data.mapv(|z| z.re).dot(&kernel.t());
        let im = data.mapv(|z| z.im).dot(&kernel.t());
        ndarray::Zip::from(data)
            .and(&re)
            .and(&im)
            .for_each(|z, &r, &i| *z = C64::new(r, i));
    }

    /// `K[i][j]` such that `f(c·x_i) = Σ_j K[i][j] f(x_j)` for band-limited `f`.
    fn interpolation_matrix(&self, factor: f64) -> Array2<f64> {
        let n = self.n();
        let h = self.grid.spacing();
        let x = self.grid.positions();
        Array2::from_shape_fn((n, n), |(i, j)| periodic_sinc((factor * x[i] - x[j]) / h, n))
    }
}

/// Periodic sinc on `n` samples; `s` is the offset in grid spacings.
pub(crate) fn periodic_sinc(s: f64, n: usize) -> f64 {
    let nearest = s.round();
    if (s - nearest).abs() < 1e-12 {
        return if nearest.rem_euclid(n as f64) == 0.0 { 1.0 } else { 0.0 };
    }
    (PI * s).sin() / (n as f64 * (PI * s / n as f64).tan())
}

/// Band-limited interpolant of a sampled `f(x, y)` at an off-grid point.
pub fn interpolate_at(values: &Array2<C64>, grid: &SpatialGrid, x: f64, y: f64) -> C64 {
    let n = grid.n_points();
    let h = grid.spacing();
    let x0 = grid.position(0);
    let wx: Vec<f64> = (0..n).map(|i| periodic_sinc((x - x0) / h - i as f64, n)).collect();
    let wy: Vec<f64> = (0..n).map(|j| periodic_sinc((y - x0) / h - j as f64, n)).collect();
    values
        .outer_iter()
        .zip(&wx)
        .filter(|(_, &w)| w != 0.0)
        .map(|(row, &w)| row.iter().zip(&wy).map(|(z, &v)| z * v).sum::<C64>() * w)
        .sum()
}

/// Transpose a square row-major matrix through a scratch buffer.
pub fn transpose(data: &mut [C64], scratch: &mut [C64], n: usize) {
    const BLOCK: usize = 32;
    for ib in (0..n).step_by(BLOCK) {
        for jb in (0..n).step_by(BLOCK) {
            for i in ib..(ib + BLOCK).min(n) {
                for j in jb..(jb + BLOCK).min(n) {
                    scratch[j * n + i] = data[i * n + j];
                }
            }
        }
    }
    data.copy_from_slice(scratch);
}

/// Full 2-D transform; output is in `[kx][ky]` order.
pub fn fft2(spectral: &Spectral, a: &mut Array2<C64>, inverse: bool) {
    let n = spectral.n();
    let mut scratch = vec![C64::new(0.0, 0.0); n * n];
    let data = a.as_slice_mut().expect("standard layout");
    spectral.rows(data, inverse);
    transpose(data, &mut scratch, n);
    spectral.rows(data, inverse);
    transpose(data, &mut scratch, n);
    if inverse {
        let norm = 1.0 / (n * n) as f64;
        data.par_iter_mut().for_each(|z| *z *= norm);
    }
}

/// Apply `exp(-i c (kx² − ky²))` to a matrix in position space.
///
/// Uses `rows → T → rows`, multiplies in the transposed spectral layout,
/// and undoes the same sequence, saving two transposes over `fft2`.
pub fn apply_separable_phase(spectral: &Spectral, data: &mut [C64], scratch: &mut [C64], phase: ArrayView1<C64>) {
    let n = spectral.n();
    let norm = 1.0 / (n * n) as f64;
    spectral.rows(data, false);
    transpose(data, scratch, n);
    spectral.rows(data, false);
    // Layout is now [ky][kx]; `phase[m] = exp(-i c k_m²)`.
    data.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        let col = phase[j].conj() * norm;
        for (i, z) in row.iter_mut().enumerate() {
            *z *= phase[i] * col;
        }
    });
    spectral.rows(data, true);
    transpose(data, scratch, n);
    spectral.rows(data, true);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> SpatialGrid {
        SpatialGrid::new(64, 16.0).unwrap()
    }

    fn gaussian(x: f64, c: f64) -> f64 {
        (-(x - c).powi(2)).exp()
    }

    #[test]
    fn fft2_round_trip() {
        let g = grid();
        let s = Spectral::new(g);
        let a0 = Array2::from_shape_fn((64, 64), |(i, j)| C64::new((i * 3 + j) as f64, (i as f64) - (j as f64) * 0.5));
        let mut a = a0.clone();
        fft2(&s, &mut a, false);
        fft2(&s, &mut a, true);
        let err = a.iter().zip(a0.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn shift_rows_translates_gaussian() {
        let g = grid();
        let s = Spectral::new(g);
        let x = g.positions();
        let mut data: Vec<C64> = (0..64 * 64).map(|k| C64::new(gaussian(x[k % 64], 0.0), 0.0)).collect();
        let shifts: Vec<f64> = (0..64).map(|i| 0.01 * i as f64 + 0.1).collect();
        s.shift_rows(&mut data, &shifts);
        for i in [0, 17, 63] {
            for j in 0..64 {
                let expect = gaussian(x[j] + shifts[i], 0.0);
                assert!((data[i * 64 + j].re - expect).abs() < 1e-9);
                assert!(data[i * 64 + j].im.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scale_rows_stretches_gaussian() {
        let g = grid();
        let s = Spectral::new(g);
        let x = g.positions();
        let mut a = Array2::from_shape_fn((4, 64), |(_, j)| C64::new(gaussian(x[j], 0.5), 0.0));
        s.scale_rows(&mut a, 0.8);
        for j in 0..64 {
            assert!((a[[2, j]].re - gaussian(0.8 * x[j], 0.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn scale_by_one_is_identity() {
        let g = grid();
        let s = Spectral::new(g);
        let a0 = Array2::from_shape_fn((3, 64), |(i, j)| C64::new(((i + j) as f64).sin(), j as f64));
        let mut a = a0.clone();
        s.scale_rows(&mut a, 1.0);
        assert_eq!(a, a0);
    }

    #[test]
    fn point_interpolation() {
        let g = grid();
        let x = g.positions();
        let a = Array2::from_shape_fn((64, 64), |(i, j)| C64::new(gaussian(x[i], 1.0) * gaussian(x[j], -0.5), 0.0));
        let z = interpolate_at(&a, &g, 0.37, -0.81);
        assert!((z.re - gaussian(0.37, 1.0) * gaussian(-0.81, -0.5)).abs() < 1e-10);
        assert_eq!(interpolate_at(&a, &g, x[5], x[9]), a[[5, 9]]);
    }

    #[test]
    fn periodic_sinc_values() {
        assert_eq!(periodic_sinc(0.0, 16), 1.0);
        assert_eq!(periodic_sinc(3.0, 16), 0.0);
        assert_eq!(periodic_sinc(16.0, 16), 1.0);
        assert_relative_eq!(periodic_sinc(0.5, 16) + periodic_sinc(-0.5, 16), 2.0 * periodic_sinc(0.5, 16));
    }
}
