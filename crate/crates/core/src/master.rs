//! Time evolution under the high-temperature Caldeira–Leggett equation
//!
//! ```text
//! ∂ρ/∂t = (iħ/2m)(∂x² − ∂y²)ρ − γ(x − y)(∂x − ∂y)ρ − D(x − y)²ρ
//! ```
//!
//! by symmetric Strang splitting. The dissipation term is a pure dilation
//! along `u = x − y`, `ρ(u, v, t) = ρ(u e^{−2γt}, v, 0)`, so `evolve` stores
//! the state in coordinates that follow that flow. In those coordinates the
//! dilation is the identity, the kinetic generator picks up a factor
//! `e^{−2γs}` and the decoherence exponent a factor `e^{4γs}`; each Strang
//! sub-step keeps its coefficients frozen at the lab-frame sub-step time, so
//! the scheme is the lab-frame splitting `K/2 S/2 C S/2 K/2` with every
//! dissipation sub-step solved exactly. Back-to-back kinetic half steps are
//! merged between samples.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::analytic::{thermal_de_broglie, PhysicalParams};
use crate::error::{Error, Result};
use crate::fft::{apply_separable_phase, Spectral};
use crate::grid::{DensityGrid, SpatialGrid, C64};
use crate::observables::{Probe, Snapshot, Trajectory};

/// Largest allowed single sub-step phase.
pub const MAX_STEP_PHASE: f64 = std::f64::consts::FRAC_PI_4;
/// Largest allowed trace change between two samples.
pub const TRACE_DRIFT_TOLERANCE: f64 = 1e-4;
/// Dilation factor handled by one shear–scale–shear pass when mapping a
/// state back to the lab frame.
const MAX_STAGE_DILATION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub enable_kinetic: bool,
    pub enable_dissipation: bool,
    pub enable_decoherence: bool,
    pub sample_every: usize,
    pub renormalize: bool,
    /// Use `2mπkT/ħ²` instead of `2mγkT/ħ²` for the decoherence coefficient.
    pub coefficient_pi_variant: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            dt: 1.0 / 64.0,
            n_steps: 64,
            enable_kinetic: true,
            enable_dissipation: true,
            enable_decoherence: true,
            sample_every: 1,
            renormalize: false,
            coefficient_pi_variant: false,
        }
    }
}

/// Largest phase each sub-step can imprint on a grid mode in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseBudget {
    /// `ħ (dt/2) k_nyq² / 2m` for a half kinetic step.
    pub kinetic: f64,
    /// `γ dt L k_nyq`: two half steps of the dilation, at the box edge.
    pub dissipation: f64,
    /// `D dt L²`.
    pub decoherence: f64,
}

impl PhaseBudget {
    pub fn max(&self) -> f64 {
        self.kinetic.max(self.dissipation).max(self.decoherence)
    }
}

impl EvolutionConfig {
    pub fn coefficient(&self, params: &PhysicalParams) -> Result<DecoherenceCoefficient> {
        if self.coefficient_pi_variant {
            DecoherenceCoefficient::pi_variant(params)
        } else {
            DecoherenceCoefficient::new(params)
        }
    }

    /// Phases of the enabled sub-steps; disabled terms contribute zero.
    pub fn phase_budget(&self, params: &PhysicalParams, grid: &SpatialGrid) -> Result<PhaseBudget> {
        let k = grid.nyquist_wavenumber();
        let l = grid.extent();
        let d = self.coefficient(params)?.d_value;
        let on = |flag: bool, value: f64| if flag { value } else { 0.0 };
        Ok(PhaseBudget {
            kinetic: on(self.enable_kinetic, params.hbar * 0.5 * self.dt * k * k / (2.0 * params.mass)),
            dissipation: on(self.enable_dissipation, params.gamma * self.dt * l * k),
            decoherence: on(self.enable_decoherence, d * self.dt * l * l),
        })
    }

    /// Largest `dt` meeting the phase bound with these flags.
    pub fn max_stable_dt(&self, params: &PhysicalParams, grid: &SpatialGrid) -> Result<f64> {
        let unit = EvolutionConfig { dt: 1.0, ..*self }.phase_budget(params, grid)?.max();
        Ok(if unit > 0.0 { MAX_STEP_PHASE / unit } else { f64::INFINITY })
    }

    pub fn validate(&self, params: &PhysicalParams, grid: &SpatialGrid) -> Result<()> {
        params.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("evolution.dt", format!("must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::config("evolution.n_steps", "must be at least 1"));
        }
        if self.sample_every == 0 || self.n_steps % self.sample_every != 0 {
            return Err(Error::config(
                "evolution.sample_every",
                format!("{} must be positive and divide n_steps = {}", self.sample_every, self.n_steps),
            ));
        }
        let budget = self.phase_budget(params, grid)?;
        if budget.max() > MAX_STEP_PHASE {
            return Err(Error::config(
                "evolution.dt",
                format!(
                    "dt = {} gives step phases {budget:?}, above pi/4; use dt <= {:.6e}",
                    self.dt,
                    self.max_stable_dt(params, grid)?
                ),
            ));
        }
        Ok(())
    }

    pub fn end_time(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }
}

/// Localization rate per squared length, `D = 2mγkT/ħ² = γ/(2λ_dB²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoherenceCoefficient {
    pub d_value: f64,
}

impl DecoherenceCoefficient {
    pub fn new(params: &PhysicalParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            d_value: 2.0 * params.mass * params.gamma * params.boltzmann * params.temperature / (params.hbar * params.hbar),
        })
    }

    /// `2mπkT/ħ²`; not a rate unless time is measured in units of `1/γ`.
    pub fn pi_variant(params: &PhysicalParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            d_value: 2.0 * params.mass * std::f64::consts::PI * params.boltzmann * params.temperature
                / (params.hbar * params.hbar),
        })
    }

    /// `γ / (2 λ_dB²)`, equal to [`Self::new`] up to rounding.
    pub fn from_wavelength(params: &PhysicalParams) -> Result<Self> {
        let lambda = thermal_de_broglie(params)?;
        Ok(Self {
            d_value: params.gamma / (2.0 * lambda * lambda),
        })
    }
}

/// `exp(-i c k_m²)` for every DFT bin.
fn kinetic_phases(grid: &SpatialGrid, c: f64) -> Array1<C64> {
    grid.wavenumbers().mapv(|k| C64::from_polar(1.0, -c * k * k))
}

/// Multiplier `exp(-w (x_i − x_j)²)` indexed by `i − j + n − 1`.
fn gaussian_in_separation(grid: &SpatialGrid, w: f64) -> Vec<f64> {
    let n = grid.n_points() as isize;
    let h = grid.spacing();
    (-(n - 1)..n).map(|d| (-w * (d as f64 * h).powi(2)).exp()).collect()
}

fn multiply_by_separation(values: &mut Array2<C64>, table: &[f64]) {
    let n = values.nrows();
    values
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            let offset = n - 1 + i;
            for (j, z) in row.iter_mut().enumerate() {
                *z *= table[offset - j];
            }
        });
}

/// Free evolution over `dt`: `ρ̂(kx, ky) ← ρ̂ exp(−iħ dt (kx² − ky²)/2m)`.
pub fn kinetic_step(rho: &DensityGrid, params: &PhysicalParams, dt: f64) -> DensityGrid {
    let spectral = Spectral::new(rho.grid);
    let mut out = rho.clone();
    let n = rho.grid.n_points();
    let mut scratch = vec![C64::new(0.0, 0.0); n * n];
    let phase = kinetic_phases(&rho.grid, params.hbar * dt / (2.0 * params.mass));
    apply_separable_phase(&spectral, out.values.as_slice_mut().expect("standard layout"), &mut scratch, phase.view());
    out
}

/// `ρ(x, y) ← ρ(ax + by, bx + ay)` with `a, b = (1 ± f)/2`, i.e.
/// `u ↦ f u` at fixed `x + y`. The diagonal is copied through unchanged.
///
/// Each pass factors the map as a shear along `y`, an axis-aligned scaling
/// and a shear along `x`, all evaluated by band-limited interpolation.
/// Strong dilations are split into passes of at most 10%.
pub fn dilate_separation(spectral: &Spectral, values: &mut Array2<C64>, f: f64) {
    if f == 1.0 {
        return;
    }
    let grid = spectral.grid();
    let n = grid.n_points();
    let x = grid.positions();
    let diagonal = values.diag().to_owned();
    let passes = (f.ln().abs() / MAX_STAGE_DILATION.ln().abs()).ceil().max(1.0) as usize;
    let stage = f.powf(1.0 / passes as f64);
    let a = 0.5 * (1.0 + stage);
    let b = 0.5 * (1.0 - stage);
    let shifts: Vec<f64> = x.iter().map(|&xi| b / a * xi).collect();
    let mut scratch = vec![C64::new(0.0, 0.0); n * n];
    for _ in 0..passes {
        spectral.shift_rows(values.as_slice_mut().expect("standard layout"), &shifts);
        spectral.scale_rows(values, stage / a);
        crate::fft::transpose(values.as_slice_mut().expect("standard layout"), &mut scratch, n);
        spectral.scale_rows(values, a);
        spectral.shift_rows(values.as_slice_mut().expect("standard layout"), &shifts);
        crate::fft::transpose(values.as_slice_mut().expect("standard layout"), &mut scratch, n);
    }
    values.diag_mut().assign(&diagonal);
}

/// Exact solution of `∂ρ/∂t = −γ(x − y)(∂x − ∂y)ρ` over `dt`:
/// `ρ(u, v) ← ρ(u e^{−2γdt}, v)`.
pub fn dissipation_step(rho: &DensityGrid, params: &PhysicalParams, dt: f64) -> DensityGrid {
    let f = (-2.0 * params.gamma * dt).exp();
    let mut out = rho.clone();
    if f == 1.0 {
        return out;
    }
    dilate_separation(&Spectral::new(rho.grid), &mut out.values, f);
    hermitize(&mut out.values);
    out
}

/// Replace `A` by `(A + A†)/2`.
pub(crate) fn hermitize(values: &mut Array2<C64>) {
    let n = values.nrows();
    for i in 0..n {
        values[[i, i]].im = 0.0;
        for j in 0..i {
            let m = 0.5 * (values[[i, j]] + values[[j, i]].conj());
            values[[i, j]] = m;
            values[[j, i]] = m.conj();
        }
    }
}

/// `ρ(x, y) ← ρ(x, y) exp(−D (x − y)² dt)`.
pub fn decoherence_step(rho: &DensityGrid, coeff: DecoherenceCoefficient, dt: f64) -> DensityGrid {
    let mut out = rho.clone();
    multiply_by_separation(&mut out.values, &gaussian_in_separation(&rho.grid, coeff.d_value * dt));
    out
}

/// Closed-form evolution under the decoherence term alone.
pub fn pure_decoherence_exact(rho0: &DensityGrid, coeff: DecoherenceCoefficient, t: f64) -> DensityGrid {
    decoherence_step(rho0, coeff, t)
}

/// Stepper for states stored in coordinates co-moving with the dilation.
#[derive(Debug, Clone)]
pub struct Propagator {
    spectral: Spectral,
    params: PhysicalParams,
    config: EvolutionConfig,
    coeff: DecoherenceCoefficient,
    /// `2γ` when dissipation is on, else 0.
    frame_rate: f64,
}

impl Propagator {
    pub fn new(grid: SpatialGrid, params: &PhysicalParams, config: &EvolutionConfig) -> Result<Self> {
        config.validate(params, &grid)?;
        Ok(Self {
            spectral: Spectral::new(grid),
            params: *params,
            config: *config,
            coeff: config.coefficient(params)?,
            frame_rate: if config.enable_dissipation { 2.0 * params.gamma } else { 0.0 },
        })
    }

    pub fn grid(&self) -> SpatialGrid {
        self.spectral.grid()
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.config
    }

    pub fn coefficient(&self) -> DecoherenceCoefficient {
        self.coeff
    }

    /// Stored separation per lab separation, `u' = f u`, at lab time `t`.
    pub fn frame_factor(&self, t: f64) -> f64 {
        (-self.frame_rate * t).exp()
    }

    fn kinetic(&self, values: &mut Array2<C64>, scratch: &mut [C64], duration: f64, t: f64) {
        if !self.config.enable_kinetic || duration == 0.0 {
            return;
        }
        let c = self.params.hbar * duration * self.frame_factor(t) / (2.0 * self.params.mass);
        let phase = kinetic_phases(&self.grid(), c);
        apply_separable_phase(&self.spectral, values.as_slice_mut().expect("standard layout"), scratch, phase.view());
    }

    fn decoherence(&self, values: &mut Array2<C64>, duration: f64, t: f64) {
        if !self.config.enable_decoherence {
            return;
        }
        let stretch = 1.0 / self.frame_factor(t);
        let w = self.coeff.d_value * duration * stretch * stretch;
        multiply_by_separation(values, &gaussian_in_separation(&self.grid(), w));
    }

    /// Map a stored state at lab time `t` to lab coordinates.
    pub fn to_lab(&self, stored: &DensityGrid, t: f64) -> DensityGrid {
        let mut out = stored.clone();
        let f = self.frame_factor(t);
        if f != 1.0 {
            dilate_separation(&self.spectral, &mut out.values, f);
            hermitize(&mut out.values);
        }
        out
    }

    /// Advance every block through `n_steps`, calling `on_sample(t, blocks)`
    /// at `t = 0` and after every `sample_every` steps; the callback returns
    /// `false` to stop early. Returns the last sampled time. Blocks stay in
    /// co-moving coordinates; use [`Self::to_lab`] or [`Snapshot`] to read them.
    pub fn run<F>(&self, blocks: &mut [DensityGrid], mut on_sample: F) -> Result<f64>
    where
        F: FnMut(f64, &mut [DensityGrid]) -> Result<bool>,
    {
        let n = self.grid().n_points();
        let dt = self.config.dt;
        let mut scratch = vec![C64::new(0.0, 0.0); n * n];
        if !on_sample(0.0, blocks)? {
            return Ok(0.0);
        }
        let mut open = true;
        for step in 0..self.config.n_steps {
            let t = step as f64 * dt;
            let t_next = (step + 1) as f64 * dt;
            let sample = (step + 1) % self.config.sample_every == 0;
            for block in blocks.iter_mut() {
                if open {
                    self.kinetic(&mut block.values, &mut scratch, 0.5 * dt, t);
                }
                self.decoherence(&mut block.values, dt, t + 0.5 * dt);
                let closing = if sample { 0.5 * dt } else { dt };
                self.kinetic(&mut block.values, &mut scratch, closing, t_next);
            }
            open = sample;
            if sample && !on_sample(t_next, blocks)? {
                return Ok(t_next);
            }
        }
        Ok(self.config.end_time())
    }
}

/// Output of [`evolve`].
#[derive(Debug, Clone)]
pub struct Evolution {
    pub trajectory: Trajectory,
    /// Lab-frame state after the last step.
    pub final_state: DensityGrid,
}

/// Evolve `rho0` and sample `probes` every `sample_every` steps.
///
/// Aborts with [`Error::TraceDrift`] if the trace moves by more than
/// [`TRACE_DRIFT_TOLERANCE`] between samples; the trajectory up to that
/// point is carried in the error.
pub fn evolve(rho0: &DensityGrid, params: &PhysicalParams, config: &EvolutionConfig, probes: &[Probe]) -> Result<Evolution> {
    let propagator = Propagator::new(rho0.grid, params, config)?;
    let mut trajectory = Trajectory::new(probes.iter().map(|p| p.name().to_string()).collect());
    trajectory.set_meta("dt", config.dt);
    trajectory.set_meta("n_steps", config.n_steps);
    trajectory.set_meta("decoherence_coefficient", propagator.coeff.d_value);
    let mut blocks = [rho0.clone()];
    let mut last_trace = rho0.trace().re;
    propagator.run(&mut blocks, |t, blocks| {
        let trace = blocks[0].trace().re;
        let drift = (trace - last_trace).abs();
        if !(drift <= TRACE_DRIFT_TOLERANCE) {
            return Err(Error::TraceDrift {
                time: t,
                drift,
                tolerance: TRACE_DRIFT_TOLERANCE,
                partial: Box::new(trajectory.clone()),
            });
        }
        if config.renormalize && trace != 1.0 {
            blocks[0].values.mapv_inplace(|z| z / trace);
            trajectory.log_renormalization(t, trace - 1.0);
            log::debug!("renormalized trace {trace} at t = {t}");
        }
        last_trace = blocks[0].trace().re;
        let snapshot = Snapshot::new(&blocks[0], &propagator, t);
        let values = probes.iter().map(|p| p.sample(&snapshot)).collect::<Result<Vec<_>>>()?;
        trajectory.push(t, values);
        Ok(true)
    })?;
    let final_state = propagator.to_lab(&blocks[0], config.end_time());
    Ok(Evolution { trajectory, final_state })
}
