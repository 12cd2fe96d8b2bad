//! Closed-form wavelengths and timescales.
//!
//! The thermal de Broglie wavelength used throughout is
//! `λ_dB = ħ / √(4 m k T)`, and the decoherence time of two branches a
//! distance `Δx` apart is `θ = τ (λ_dB / Δx)²`. The relaxation time `τ` is
//! always an input here; the simulator defines its own operational value
//! (see [`crate::observables::operational_relaxation_time`]).

use crate::error::{Error, Result};

/// Reduced Planck constant, CODATA 2018 (exact), J·s.
pub const HBAR_CODATA: f64 = 1.054_571_817e-34;
/// Boltzmann constant, CODATA 2018 (exact), J/K.
pub const BOLTZMANN_CODATA: f64 = 1.380_649e-23;

/// Particle, bath and fundamental constants.
///
/// `hbar` and `boltzmann` default to CODATA values but are ordinary fields:
/// classical-limit sweeps rescale `hbar`, and the desk preset runs in
/// natural units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub mass: f64,
    /// Relaxation rate constant; momentum decays as `exp(-2 γ t)`.
    pub gamma: f64,
    pub temperature: f64,
    pub hbar: f64,
    pub boltzmann: f64,
}

impl PhysicalParams {
    /// SI parameters with CODATA constants.
    pub fn new(mass: f64, gamma: f64, temperature: f64) -> Result<Self> {
        let params = Self {
            mass,
            gamma,
            temperature,
            hbar: HBAR_CODATA,
            boltzmann: BOLTZMANN_CODATA,
        };
        params.validate()?;
        Ok(params)
    }

    /// Natural units `ħ = m = k = 1` with `T = 1/4`, so that `λ_dB = 1`,
    /// and `γ = 0.01`.
    pub fn desk() -> Self {
        Self {
            mass: 1.0,
            gamma: 0.01,
            temperature: 0.25,
            hbar: 1.0,
            boltzmann: 1.0,
        }
    }

    pub fn with_hbar(self, hbar: f64) -> Result<Self> {
        let params = Self { hbar, ..self };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("temperature", self.temperature),
            ("hbar", self.hbar),
            ("boltzmann", self.boltzmann),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::domain(format!("{name} must be positive and finite, got {value}")));
            }
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::domain(format!(
                "gamma must be non-negative and finite, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Viscosity `η = 2 m γ`.
    pub fn viscosity(&self) -> f64 {
        2.0 * self.mass * self.gamma
    }
}

/// A relaxation/decoherence timescale pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimescalePair {
    pub tau: f64,
    pub theta: f64,
}

impl TimescalePair {
    pub fn new(tau: f64, delta_x: f64, params: &PhysicalParams) -> Result<Self> {
        Ok(Self {
            tau,
            theta: decoherence_time(tau, delta_x, params)?,
        })
    }

    pub fn theta_over_tau(&self) -> f64 {
        self.theta / self.tau
    }
}

/// `λ_dB = ħ / √(4 m k T)`.
pub fn thermal_de_broglie(params: &PhysicalParams) -> Result<f64> {
    params.validate()?;
    Ok(params.hbar / (4.0 * params.mass * params.boltzmann * params.temperature).sqrt())
}

/// The conventional thermal wavelength in the normalization that satisfies
/// `λ_dB² = (2/π) λ_T²`.
///
/// Note that the textbook formula `h / √(2π m k T)` is *not* related to
/// `λ_dB` by that factor; it is available separately as
/// [`textbook_thermal_wavelength`].
pub fn thermal_wavelength(params: &PhysicalParams) -> Result<f64> {
    Ok(thermal_de_broglie(params)? * (std::f64::consts::PI / 2.0).sqrt())
}

/// `h / √(2π m k T)` with `h = 2πħ`.
pub fn textbook_thermal_wavelength(params: &PhysicalParams) -> Result<f64> {
    params.validate()?;
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(two_pi * params.hbar / (two_pi * params.mass * params.boltzmann * params.temperature).sqrt())
}

/// `θ = τ (λ_dB / Δx)²`.
pub fn decoherence_time(tau: f64, delta_x: f64, params: &PhysicalParams) -> Result<f64> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::domain(format!("tau must be positive, got {tau}")));
    }
    if !(delta_x.is_finite() && delta_x > 0.0) {
        return Err(Error::domain(format!(
            "delta_x must be positive, got {delta_x}; a zero separation never decoheres"
        )));
    }
    let lambda = thermal_de_broglie(params)?;
    Ok(tau * (lambda / delta_x).powi(2))
}

/// `τ / θ = (Δx / δ)²`.
pub fn timescale_ratio(delta_x: f64, delta: f64) -> Result<f64> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::domain(format!("delta must be positive, got {delta}")));
    }
    if !delta_x.is_finite() {
        return Err(Error::domain("delta_x must be finite"));
    }
    Ok((delta_x / delta).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalLimitRow {
    pub hbar: f64,
    pub lambda_db: f64,
    pub theta: f64,
    pub theta_over_tau: f64,
}

/// Tabulate `λ_dB`, `θ` and `θ/τ` as `ħ` is lowered at fixed `τ` and `Δx`.
pub fn classical_limit_sweep(
    params: &PhysicalParams,
    hbar_values: &[f64],
    delta_x: f64,
    tau: f64,
) -> Result<Vec<ClassicalLimitRow>> {
    if hbar_values.is_empty() {
        return Err(Error::domain("hbar sweep needs at least one value"));
    }
    if hbar_values.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
        return Err(Error::domain("hbar values must be strictly positive"));
    }
    if hbar_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::domain("hbar values must be sorted strictly descending"));
    }
    hbar_values
        .iter()
        .map(|&hbar| {
            let p = params.with_hbar(hbar)?;
            let theta = decoherence_time(tau, delta_x, &p)?;
            Ok(ClassicalLimitRow {
                hbar,
                lambda_db: thermal_de_broglie(&p)?,
                theta,
                theta_over_tau: theta / tau,
            })
        })
        .collect()
}
