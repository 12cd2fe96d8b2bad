//! Impulsive von Neumann measurement of a two-level system by a free-particle
//! pointer that is itself monitored by the bath.
//!
//! The coupling `exp(−Δx P ∂/∂x)` translates the pointer by `Δx` on the
//! `P = 1` branch. Afterwards the bath acts only on the pointer position, so
//! each block `ρ_{ss'}(x, y)` of the joint state evolves independently under
//! the same master equation.

use ndarray::Array2;

use crate::analytic::{thermal_de_broglie, PhysicalParams};
use crate::error::{Error, Result};
use crate::fft::{transpose, Spectral};
use crate::grid::{DensityGrid, SpatialGrid, WavefunctionGrid, C64};
use crate::master::{EvolutionConfig, Propagator, TRACE_DRIFT_TOLERANCE};
use crate::observables::{fit_exponential_rate, RateFit, Trajectory};
use crate::state::{gaussian_packet, pure_density, wavelet_centers, wavelet_count};

pub const AMPLITUDE_TOLERANCE: f64 = 1e-12;
/// Diagonal level, relative to the peak, that marks the edge of a packet's
/// support: `exp(−12.5)`, five half-widths out on a Gaussian.
const SUPPORT_LEVEL: f64 = 3.726_653_172_078_671e-6;

/// Amplitudes of the measured system on the `P = 0` and `P = 1` eigenstates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemState {
    pub p0_amplitude: C64,
    pub p1_amplitude: C64,
}

impl SystemState {
    pub fn new(p0_amplitude: C64, p1_amplitude: C64) -> Result<Self> {
        let norm = p0_amplitude.norm_sqr() + p1_amplitude.norm_sqr();
        if !((norm - 1.0).abs() <= AMPLITUDE_TOLERANCE) {
            return Err(Error::config(
                "measure.a0",
                format!("|a0|^2 + |a1|^2 = {norm}, must be 1"),
            ));
        }
        Ok(Self {
            p0_amplitude,
            p1_amplitude,
        })
    }

    /// Real amplitudes `(√w, √(1 − w))` for outcome weight `w` on `P = 0`.
    pub fn with_weight(w0: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w0) {
            return Err(Error::config("measure.a0", format!("weight {w0} outside [0, 1]")));
        }
        Self::new(C64::new(w0.sqrt(), 0.0), C64::new((1.0 - w0).sqrt(), 0.0))
    }

    pub fn weights(&self) -> [f64; 2] {
        [self.p0_amplitude.norm_sqr(), self.p1_amplitude.norm_sqr()]
    }
}

/// `blocks[s][s'] = ⟨s|ρ|s'⟩` as a kernel on the pointer grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub grid: SpatialGrid,
    pub blocks: [[DensityGrid; 2]; 2],
}

impl JointState {
    /// Build from the three independent blocks; `⟨1|ρ|0⟩` is the adjoint of `⟨0|ρ|1⟩`.
    pub fn from_blocks(b00: DensityGrid, b01: DensityGrid, b11: DensityGrid) -> Self {
        let b10 = DensityGrid {
            grid: b01.grid,
            values: b01.values.t().mapv(|z| z.conj()),
        };
        Self {
            grid: b00.grid,
            blocks: [[b00, b01], [b10, b11]],
        }
    }

    pub fn outcome_weights(&self) -> [f64; 2] {
        [self.blocks[0][0].trace().re, self.blocks[1][1].trace().re]
    }

    pub fn total_trace(&self) -> f64 {
        self.outcome_weights().iter().sum()
    }

    /// Largest violation of `ρ_{ss'}(x, y) = conj ρ_{s's}(y, x)`.
    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = self.blocks[0][0].hermiticity_error().max(self.blocks[1][1].hermiticity_error());
        let (a, b) = (&self.blocks[0][1].values, &self.blocks[1][0].values);
        for ((i, j), z) in a.indexed_iter() {
            worst = worst.max((z - b[[j, i]].conj()).norm());
        }
        worst
    }

    pub fn check_invariants(&self) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > crate::grid::HERMITICITY_TOLERANCE {
            return Err(Error::Diagnostic(format!("joint state not Hermitian: {herm:.3e}")));
        }
        let trace = self.total_trace();
        if (trace - 1.0).abs() > crate::grid::TRACE_TOLERANCE {
            return Err(Error::Diagnostic(format!("joint state trace {trace} != 1")));
        }
        Ok(())
    }

    /// `(∫∫ |ρ_01|²)^{1/2}`.
    pub fn cross_norm(&self) -> f64 {
        crate::observables::purity(&self.blocks[0][1]).sqrt()
    }

    /// `∫∫ |ρ_01|`.
    pub fn cross_l1(&self) -> f64 {
        self.blocks[0][1].l1_norm()
    }

    /// `Σ_{ss'} ∫∫ |ρ_{ss'} − σ_{ss'}|`.
    pub fn l1_distance(&self, other: &JointState) -> f64 {
        let mut total = 0.0;
        for s in 0..2 {
            for t in 0..2 {
                let d = DensityGrid {
                    grid: self.grid,
                    values: &self.blocks[s][t].values - &other.blocks[s][t].values,
                };
                total += d.l1_norm();
            }
        }
        total
    }

    /// Equal-weight average of several joint states on one grid.
    pub fn average(states: &[JointState]) -> Result<JointState> {
        let first = states.first().ok_or_else(|| Error::domain("cannot average zero states"))?;
        let w = C64::new(1.0 / states.len() as f64, 0.0);
        let mut out = first.clone();
        for s in 0..2 {
            for t in 0..2 {
                out.blocks[s][t].values.fill(C64::new(0.0, 0.0));
                for state in states {
                    if state.grid != first.grid {
                        return Err(Error::domain("joint states live on different grids"));
                    }
                    out.blocks[s][t].values.scaled_add(w, &state.blocks[s][t].values);
                }
            }
        }
        Ok(out)
    }

    /// The post-measurement mixture: diagonal blocks kept, cross blocks dropped.
    pub fn dephased(&self) -> JointState {
        let mut out = self.clone();
        out.blocks[0][1] = DensityGrid::zeros(self.grid);
        out.blocks[1][0] = DensityGrid::zeros(self.grid);
        out
    }
}

/// Lowest and highest grid positions where `ρ(x, x)` exceeds the support level.
fn diagonal_support(rho: &DensityGrid) -> Option<(f64, f64)> {
    let diag = rho.diagonal();
    let peak = diag.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return None;
    }
    let inside: Vec<usize> = (0..diag.len()).filter(|&i| diag[i] >= SUPPORT_LEVEL * peak).collect();
    Some((rho.grid.position(inside[0]), rho.grid.position(*inside.last().expect("peak is inside"))))
}

/// `(Tρ)(x, y) = ρ(x − shift_x, y − shift_y)` by spectral interpolation.
fn translate(spectral: &Spectral, rho: &DensityGrid, shift_x: f64, shift_y: f64) -> DensityGrid {
    let n = rho.grid.n_points();
    let mut values = rho.values.clone();
    let mut scratch = vec![C64::new(0.0, 0.0); n * n];
    let data = values.as_slice_mut().expect("standard layout");
    if shift_y != 0.0 {
        spectral.shift_rows(data, &vec![-shift_y; n]);
    }
    if shift_x != 0.0 {
        transpose(data, &mut scratch, n);
        spectral.shift_rows(data, &vec![-shift_x; n]);
        transpose(data, &mut scratch, n);
    }
    DensityGrid { grid: rho.grid, values }
}

/// Entangle the pointer with the system: the `P = 1` branch is translated by `Δx`.
pub fn impulsive_coupling(apparatus: &DensityGrid, system: SystemState, delta_x: f64) -> Result<JointState> {
    let grid = apparatus.grid;
    if !delta_x.is_finite() {
        return Err(Error::config("measure.delta_x", "must be finite"));
    }
    let (lo, hi) = diagonal_support(apparatus).ok_or_else(|| Error::Diagnostic("apparatus state is empty".into()))?;
    let half = 0.5 * grid.extent();
    if lo + delta_x < -half || hi + delta_x >= half {
        return Err(Error::config(
            "measure.delta_x",
            format!(
                "shifting support [{lo}, {hi}] by {delta_x} leaves the box [{}, {half})",
                -half
            ),
        ));
    }
    let spectral = Spectral::new(grid);
    let [w0, w1] = system.weights();
    let cross = system.p0_amplitude * system.p1_amplitude.conj();
    let mut b00 = apparatus.clone();
    b00.values.mapv_inplace(|z| z * w0);
    let mut b01 = translate(&spectral, apparatus, 0.0, delta_x);
    b01.values.mapv_inplace(|z| z * cross);
    let mut b11 = translate(&spectral, apparatus, delta_x, delta_x);
    b11.values.mapv_inplace(|z| z * w1);
    Ok(JointState::from_blocks(b00, b01, b11))
}

/// [`impulsive_coupling`] for a pure pointer state.
pub fn impulsive_coupling_pure(apparatus: &WavefunctionGrid, system: SystemState, delta_x: f64) -> Result<JointState> {
    impulsive_coupling(&pure_density(apparatus), system, delta_x)
}

/// Pointer prepared by a position measurement of accuracy `σ`: a mixture of
/// `round(σ/λ_dB)` wavelets of half-width `λ_dB`, centred on the origin.
pub fn prepared_apparatus(grid: SpatialGrid, sigma: f64, params: &PhysicalParams) -> Result<DensityGrid> {
    let wavelets = prepared_wavelets(grid, sigma, 0.0, params)?;
    let weight = C64::new(1.0 / wavelets.len() as f64, 0.0);
    let mut rho = DensityGrid::zeros(grid);
    for w in &wavelets {
        rho.values.scaled_add(weight, &pure_density(w).values);
    }
    Ok(rho)
}

/// The wavelets of [`prepared_apparatus`], shifted to `center`.
///
/// Below the thermal wavelength the pointer is a single packet of
/// half-width `σ`.
pub fn prepared_wavelets(grid: SpatialGrid, sigma: f64, center: f64, params: &PhysicalParams) -> Result<Vec<WavefunctionGrid>> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::config("measure.sigma", format!("must be positive, got {sigma}")));
    }
    let lambda = thermal_de_broglie(params)?;
    if sigma < lambda {
        log::warn!("pointer width {sigma} is below the thermal wavelength {lambda}; using one packet of that width");
    }
    let halfwidth = sigma.min(lambda);
    let n = wavelet_count(sigma, halfwidth);
    wavelet_centers(sigma, n)
        .into_iter()
        .map(|c| {
            gaussian_packet(grid, c + center, halfwidth, 0.0, params.hbar).map_err(|e| match e {
                Error::Config { message, .. } => Error::config("measure.sigma", format!("{n} wavelets do not fit: {message}")),
                other => other,
            })
        })
        .collect()
}

/// Output of [`evolve_joint`].
#[derive(Debug, Clone)]
pub struct JointEvolution {
    /// Lab-frame joint state after the last step.
    pub final_state: JointState,
    /// Columns: `diag0_trace`, `diag1_trace`, `cross01_norm`, `cross01_l1`,
    /// `ideal_distance`.
    pub trajectory: Trajectory,
}

pub const JOINT_SERIES: [&str; 5] = ["diag0_trace", "diag1_trace", "cross01_norm", "cross01_l1", "ideal_distance"];

/// Evolve each block of `state` under the master equation.
pub fn evolve_joint(state: &JointState, params: &PhysicalParams, config: &EvolutionConfig) -> Result<JointEvolution> {
    evolve_joint_mixture(std::slice::from_ref(state), params, config)
}

/// Evolve the equal-weight average of `components` by evolving each
/// component separately and summing blocks at every sample.
///
/// `ideal_distance` is the `L¹` distance to the post-measurement mixture
/// (cross blocks removed) evolved under the same dynamics; since the
/// dynamics act blockwise it equals `2 ∫∫ |ρ_01|`.
pub fn evolve_joint_mixture(
    components: &[JointState],
    params: &PhysicalParams,
    config: &EvolutionConfig,
) -> Result<JointEvolution> {
    let first = components.first().ok_or_else(|| Error::domain("no apparatus components"))?;
    let grid = first.grid;
    let propagator = Propagator::new(grid, params, config)?;
    let weight = 1.0 / components.len() as f64;
    let mut blocks: Vec<DensityGrid> = components
        .iter()
        .flat_map(|c| [c.blocks[0][0].clone(), c.blocks[0][1].clone(), c.blocks[1][1].clone()])
        .collect();
    let mut traj = Trajectory::new(JOINT_SERIES.iter().map(|s| s.to_string()).collect());
    traj.set_meta("components", components.len());
    let mut last_trace: Option<f64> = None;
    let sum_blocks = |blocks: &[DensityGrid], which: usize| {
        let mut acc = Array2::<C64>::zeros((grid.n_points(), grid.n_points()));
        for b in blocks.iter().skip(which).step_by(3) {
            acc.scaled_add(C64::new(weight, 0.0), &b.values);
        }
        DensityGrid { grid, values: acc }
    };
    propagator.run(&mut blocks, |t, blocks| {
        let b00 = sum_blocks(blocks, 0);
        let b01 = sum_blocks(blocks, 1);
        let b11 = sum_blocks(blocks, 2);
        let (w0, w1) = (b00.trace().re, b11.trace().re);
        if let Some(prev) = last_trace {
            let drift = (w0 + w1 - prev).abs();
            if !(drift <= TRACE_DRIFT_TOLERANCE) {
                return Err(Error::TraceDrift {
                    time: t,
                    drift,
                    tolerance: TRACE_DRIFT_TOLERANCE,
                    partial: Box::new(traj.clone()),
                });
            }
        }
        last_trace = Some(w0 + w1);
        let f = propagator.frame_factor(t);
        // Lab-frame integrals pick up the Jacobian 1/f of the co-moving map.
        let hs = (crate::observables::purity(&b01) / f).sqrt();
        let l1 = b01.l1_norm() / f;
        traj.push(t, vec![w0, w1, hs, l1, 2.0 * l1]);
        Ok(true)
    })?;
    let t_end = config.end_time();
    let to_lab = |b: DensityGrid| propagator.to_lab(&b, t_end);
    let final_state = JointState::from_blocks(
        to_lab(sum_blocks(&blocks, 0)),
        to_lab(sum_blocks(&blocks, 1)),
        to_lab(sum_blocks(&blocks, 2)),
    );
    Ok(JointEvolution {
        final_state,
        trajectory: traj,
    })
}

/// Decay rate of `cross01_norm` while it falls from its initial value to `1/e` of it.
pub fn fit_cross_decay(traj: &Trajectory) -> Result<RateFit> {
    let series = traj
        .series("cross01_norm")
        .ok_or_else(|| Error::domain("trajectory has no cross01_norm"))?;
    let initial = *series.first().ok_or_else(|| Error::domain("empty trajectory"))?;
    if !(initial > 0.0) {
        return Err(Error::domain("cross block is zero; nothing decays"));
    }
    let cutoff = initial * (-1.0f64).exp();
    let end = series.iter().position(|&v| v < cutoff).unwrap_or(series.len());
    let times = traj.times();
    if end == 0 {
        return Err(Error::domain("cross block is zero; nothing decays"));
    }
    fit_exponential_rate(traj, "cross01_norm", (times[0], times[end - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::incoherent_mixture;
    use approx::assert_relative_eq;

    fn grid() -> SpatialGrid {
        SpatialGrid::new(128, 32.0).unwrap()
    }

    fn pointer() -> WavefunctionGrid {
        gaussian_packet(grid(), -4.0, 1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn eigenstate_inputs() {
        let zero = SystemState::with_weight(1.0).unwrap();
        let s = impulsive_coupling_pure(&pointer(), zero, 8.0).unwrap();
        assert_eq!(s.blocks[0][0], pure_density(&pointer()));
        assert!(s.blocks[1][1].values.iter().all(|z| z.norm() == 0.0));
        assert!(s.blocks[0][1].values.iter().all(|z| z.norm() == 0.0));

        let one = SystemState::with_weight(0.0).unwrap();
        let s = impulsive_coupling_pure(&pointer(), one, 8.0).unwrap();
        let moved = pure_density(&gaussian_packet(grid(), 4.0, 1.0, 0.0, 1.0).unwrap());
        assert!(s.blocks[1][1].max_abs_diff(&moved) < 1e-12);
        assert!(s.blocks[0][1].values.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn equal_superposition_cross_norm() {
        let s = impulsive_coupling_pure(&pointer(), SystemState::with_weight(0.5).unwrap(), 8.0).unwrap();
        s.check_invariants().unwrap();
        assert_relative_eq!(s.cross_norm(), 0.5, max_relative = 1e-10);
        let w = s.outcome_weights();
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shift_out_of_box_is_rejected() {
        let err = impulsive_coupling_pure(&pointer(), SystemState::with_weight(0.5).unwrap(), 18.0).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "measure.delta_x"));
    }

    #[test]
    fn amplitudes_must_be_normalized() {
        assert!(SystemState::new(C64::new(0.5, 0.0), C64::new(0.5, 0.0)).is_err());
        let s = SystemState::new(C64::new(0.6, 0.0), C64::new(0.0, 0.8)).unwrap();
        assert_relative_eq!(s.weights()[1], 0.64, max_relative = 1e-15);
    }

    #[test]
    fn prepared_apparatus_single_wavelet() {
        let p = PhysicalParams::desk();
        let a = prepared_apparatus(grid(), 1.0, &p).unwrap();
        let single = pure_density(&gaussian_packet(grid(), 0.0, 1.0, 0.0, 1.0).unwrap());
        assert!(a.max_abs_diff(&single) < 1e-15);
        assert_eq!(prepared_wavelets(grid(), 8.0, -2.0, &p).unwrap().len(), 8);
        let wide = prepared_apparatus(grid(), 8.0, &p).unwrap();
        assert!(wide.max_abs_diff(&incoherent_mixture(grid(), 8.0, 1.0, 1.0).unwrap()) < 1e-15);
        let narrow = prepared_wavelets(grid(), 0.5, 0.0, &p).unwrap();
        assert_eq!(narrow.len(), 1);
        assert!((narrow[0].position_variance() - 0.25).abs() < 1e-10);
    }

    #[test]
    fn dephased_distance_is_twice_cross_l1() {
        let s = impulsive_coupling_pure(&pointer(), SystemState::with_weight(0.5).unwrap(), 8.0).unwrap();
        assert_relative_eq!(s.l1_distance(&s.dephased()), 2.0 * s.cross_l1(), max_relative = 1e-12);
    }
}
