//! Initial states: Gaussian packets, two-branch superpositions and
//! incoherent mixtures of narrow wavelets.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, SpatialGrid, WavefunctionGrid, C64};

/// Packets must keep this many half-widths clear of the periodic boundary.
pub const MARGIN_HALFWIDTHS: f64 = 5.0;

/// Reject a packet that is unresolved or too close to the boundary.
pub fn check_packet_fits(grid: &SpatialGrid, center: f64, halfwidth: f64, field: &str) -> Result<()> {
    if !(halfwidth.is_finite() && halfwidth >= 2.0 * grid.spacing()) {
        return Err(Error::config(
            field,
            format!(
                "halfwidth {halfwidth} must be at least two grid spacings ({})",
                2.0 * grid.spacing()
            ),
        ));
    }
    let reach = center.abs() + MARGIN_HALFWIDTHS * halfwidth;
    if !(reach <= 0.5 * grid.extent()) {
        return Err(Error::config(
            field,
            format!(
                "packet at {center} with halfwidth {halfwidth} needs |center| + 5*halfwidth = {reach} <= extent/2 = {}",
                0.5 * grid.extent()
            ),
        ));
    }
    Ok(())
}

/// `ψ(x) ∝ exp(−(x − c)²/4δ² + i p x/ħ)`, normalized on the grid.
pub fn gaussian_packet(grid: SpatialGrid, center: f64, halfwidth: f64, momentum: f64, hbar: f64) -> Result<WavefunctionGrid> {
    check_packet_fits(&grid, center, halfwidth, "state.halfwidth")?;
    let k0 = momentum / hbar;
    let k_reach = k0.abs() + MARGIN_HALFWIDTHS / (2.0 * halfwidth);
    if !(k_reach.is_finite() && k_reach <= grid.nyquist_wavenumber()) {
        return Err(Error::config(
            "state.momentum",
            format!(
                "momentum {momentum} puts spectral support at k = {k_reach}, beyond Nyquist {}",
                grid.nyquist_wavenumber()
            ),
        ));
    }
    let amplitude = (2.0 * std::f64::consts::PI * halfwidth * halfwidth).powf(-0.25);
    let amplitudes = grid.positions().mapv(|x| {
        let envelope = amplitude * (-(x - center).powi(2) / (4.0 * halfwidth * halfwidth)).exp();
        C64::from_polar(envelope, k0 * x)
    });
    WavefunctionGrid::new(grid, amplitudes)?.normalized()
}

/// Two Gaussian branches at `±Δx/2` and their normalized superposition.
#[derive(Debug, Clone)]
pub struct CatState {
    pub delta_x: f64,
    pub halfwidth: f64,
    /// Branch centred at `+Δx/2`.
    pub alpha: WavefunctionGrid,
    /// Branch centred at `−Δx/2`.
    pub beta: WavefunctionGrid,
    /// `(α + β)/Z` with `Z² = 2 + 2 Re⟨α|β⟩`.
    pub psi: WavefunctionGrid,
}

impl CatState {
    pub fn new(grid: SpatialGrid, delta_x: f64, halfwidth: f64, hbar: f64) -> Result<Self> {
        if !(delta_x.is_finite() && delta_x >= 0.0) {
            return Err(Error::config("state.delta_x", format!("must be non-negative, got {delta_x}")));
        }
        let alpha = gaussian_packet(grid, 0.5 * delta_x, halfwidth, 0.0, hbar)?;
        let beta = gaussian_packet(grid, -0.5 * delta_x, halfwidth, 0.0, hbar)?;
        let z = (2.0 + 2.0 * alpha.inner(&beta).re).sqrt();
        let amplitudes = (&alpha.amplitudes + &beta.amplitudes).mapv(|a| a / z);
        let psi = WavefunctionGrid::new(grid, amplitudes)?;
        Ok(Self {
            delta_x,
            halfwidth,
            alpha,
            beta,
            psi,
        })
    }

    /// `1/Z`; tends to `1/√2` for well-separated branches.
    pub fn normalization(&self) -> f64 {
        1.0 / (2.0 + 2.0 * self.alpha.inner(&self.beta).re).sqrt()
    }
}

/// Coherent superposition of packets at `±Δx/2`.
pub fn cat_state(grid: SpatialGrid, delta_x: f64, halfwidth: f64, hbar: f64) -> Result<WavefunctionGrid> {
    Ok(CatState::new(grid, delta_x, halfwidth, hbar)?.psi)
}

/// `|ψ⟩⟨ψ|`.
pub fn pure_density(psi: &WavefunctionGrid) -> DensityGrid {
    outer(psi, psi)
}

/// `|a⟩⟨b|` as a grid kernel `a(x) conj(b(y))`.
pub fn outer(a: &WavefunctionGrid, b: &WavefunctionGrid) -> DensityGrid {
    let n = a.grid.n_points();
    let values = Array2::from_shape_fn((n, n), |(i, j)| a.amplitudes[i] * b.amplitudes[j].conj());
    DensityGrid { grid: a.grid, values }
}

/// Number of wavelets used to fill a width `sigma`.
pub fn wavelet_count(sigma: f64, halfwidth: f64) -> usize {
    ((sigma / halfwidth).round() as usize).max(1)
}

/// Centres of the wavelets: midpoints of `n` equal cells spanning `[−σ/2, σ/2]`.
pub fn wavelet_centers(sigma: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| -0.5 * sigma + (i as f64 + 0.5) * sigma / n as f64)
        .collect()
}

/// The pure wavelets making up [`incoherent_mixture`].
pub fn mixture_wavelets(grid: SpatialGrid, sigma: f64, halfwidth: f64, hbar: f64) -> Result<Vec<WavefunctionGrid>> {
    if !(sigma.is_finite() && halfwidth > 0.0 && sigma >= halfwidth) {
        return Err(Error::config(
            "state.sigma",
            format!("sigma {sigma} must be at least the wavelet halfwidth {halfwidth}"),
        ));
    }
    let n = wavelet_count(sigma, halfwidth);
    wavelet_centers(sigma, n)
        .into_iter()
        .map(|c| {
            gaussian_packet(grid, c, halfwidth, 0.0, hbar).map_err(|e| match e {
                Error::Config { message, .. } => Error::config("state.sigma", format!("{n} wavelets do not fit: {message}")),
                other => other,
            })
        })
        .collect()
}

/// Equal-weight mixture of `round(σ/δ)` Gaussian wavelets of halfwidth `δ`.
pub fn incoherent_mixture(grid: SpatialGrid, sigma: f64, halfwidth: f64, hbar: f64) -> Result<DensityGrid> {
    let wavelets = mixture_wavelets(grid, sigma, halfwidth, hbar)?;
    let weight = 1.0 / wavelets.len() as f64;
    let mut rho = DensityGrid::zeros(grid);
    for w in &wavelets {
        rho.values.scaled_add(C64::new(weight, 0.0), &pure_density(w).values);
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremum {
    pub i: usize,
    pub j: usize,
    pub x: f64,
    pub y: f64,
    pub magnitude: f64,
}

/// Diagonal and off-diagonal peaks of `|ρ|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatExtrema {
    /// Two largest diagonal maxima, ordered by decreasing `x`.
    pub diagonal: [Extremum; 2],
    /// Off-diagonal maximum with `x > y`, then its mirror image.
    pub off_diagonal: [Extremum; 2],
}

fn is_local_max(mag: &Array2<f64>, i: usize, j: usize) -> bool {
    let n = mag.nrows() as isize;
    let v = mag[[i, j]];
    if v <= 0.0 {
        return false;
    }
    for di in -1isize..=1 {
        for dj in -1isize..=1 {
            let (a, b) = (i as isize + di, j as isize + dj);
            if (di, dj) != (0, 0) && (0..n).contains(&a) && (0..n).contains(&b) && mag[[a as usize, b as usize]] > v {
                return false;
            }
        }
    }
    true
}

/// Scan `|ρ|` for the four extrema of a two-branch state.
pub fn locate_extrema(rho: &DensityGrid) -> Result<CatExtrema> {
    let grid = rho.grid;
    let n = grid.n_points();
    let mag = rho.values.mapv(|z| z.norm());
    let diag: Array1<f64> = rho.diagonal();
    let extremum = |i: usize, j: usize| Extremum {
        i,
        j,
        x: grid.position(i),
        y: grid.position(j),
        magnitude: mag[[i, j]],
    };

    let mut diagonal: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = if i > 0 { diag[i - 1] } else { f64::NEG_INFINITY };
            let right = if i + 1 < n { diag[i + 1] } else { f64::NEG_INFINITY };
            diag[i] > 0.0 && diag[i] >= left && diag[i] > right
        })
        .collect();
    diagonal.sort_by(|&a, &b| diag[b].total_cmp(&diag[a]));
    if diagonal.len() < 2 {
        return Err(Error::Diagnostic(format!(
            "found {} diagonal maxima, a two-branch state has two",
            diagonal.len()
        )));
    }
    let (mut d0, mut d1) = (diagonal[0], diagonal[1]);
    if d0 < d1 {
        std::mem::swap(&mut d0, &mut d1);
    }

    let mut best: Option<(usize, usize)> = None;
    for i in 0..n {
        for j in 0..i {
            if is_local_max(&mag, i, j) && best.map_or(true, |(a, b)| mag[[i, j]] > mag[[a, b]]) {
                best = Some((i, j));
            }
        }
    }
    let (oi, oj) = best.ok_or_else(|| Error::Diagnostic("no off-diagonal maximum; state is not cat-like".into()))?;
    Ok(CatExtrema {
        diagonal: [extremum(d0, d0), extremum(d1, d1)],
        off_diagonal: [extremum(oi, oj), extremum(oj, oi)],
    })
}
