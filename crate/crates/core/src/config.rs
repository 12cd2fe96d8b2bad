//! Run configuration: `key = value` text with dotted keys and `#` comments.
//!
//! Values are layered: built-in defaults (or the desk preset), then a config
//! file, then command-line overrides. Every key is validated on load and
//! unknown keys are rejected by name.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::analytic::{PhysicalParams, BOLTZMANN_CODATA, HBAR_CODATA};
use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, C64};
use crate::master::EvolutionConfig;
use crate::observables::CoherenceWindow;

/// Separations, in thermal wavelengths, that the ratio sweep accepts.
pub const SWEEP_N_ALLOWED: [f64; 5] = [2.0, 3.0, 4.0, 6.0, 8.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Cat,
    Gaussian,
    Mixture,
}

impl StateKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "cat" => Some(Self::Cat),
            "gaussian" => Some(Self::Gaussian),
            "mixture" => Some(Self::Mixture),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Cat => "cat",
            Self::Gaussian => "gaussian",
            Self::Mixture => "mixture",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateConfig {
    pub kind: StateKind,
    /// Branch separation of a cat state; also the `Δx` used by `timescales`.
    pub delta_x: f64,
    pub halfwidth: f64,
    /// Width of a mixture.
    pub sigma: f64,
    pub center: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_values: Vec<f64>,
    /// Analytic table, strictly descending.
    pub hbar_values: Vec<f64>,
    /// `ħ` values to confirm by simulation.
    pub simulate_hbar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureConfig {
    pub delta_x: f64,
    pub a0: C64,
    pub a1: C64,
    /// Pointer width; the pointer is a mixture of `σ/λ_dB` wavelets.
    pub sigma: f64,
    /// Pointer centre before the impulse; `None` puts it at `−Δx/2`.
    pub center: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub params: PhysicalParams,
    pub grid: SpatialGrid,
    pub evolution: EvolutionConfig,
    pub state: StateConfig,
    pub window: CoherenceWindow,
    pub sweep: SweepConfig,
    pub measure: MeasureConfig,
    pub output_dir: PathBuf,
    pub checkpoint: bool,
    pub workers: usize,
}

/// Keys accepted in a config file, in echo order.
pub const KEYS: &[&str] = &[
    "physics.mass",
    "physics.temperature",
    "physics.gamma",
    "physics.tau",
    "physics.hbar",
    "physics.boltzmann",
    "grid.n_points",
    "grid.extent",
    "evolution.dt",
    "evolution.n_steps",
    "evolution.sample_every",
    "evolution.kinetic",
    "evolution.dissipation",
    "evolution.decoherence",
    "evolution.renormalize",
    "evolution.pi_variant",
    "state.kind",
    "state.delta_x",
    "state.halfwidth",
    "state.sigma",
    "state.center",
    "state.momentum",
    "fit.coherence_low",
    "fit.coherence_high",
    "sweep.n_values",
    "sweep.hbar_values",
    "sweep.simulate_hbar",
    "measure.delta_x",
    "measure.a0",
    "measure.a1",
    "measure.sigma",
    "measure.center",
    "output.dir",
    "output.checkpoint",
    "run.workers",
];

/// Physical keys that must be given when no preset supplies them.
const REQUIRED_WITHOUT_PRESET: [&str; 2] = ["physics.mass", "physics.temperature"];

/// Parse `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::config(key, "unknown key"));
        }
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(Error::config(key, "given more than once"));
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

fn number(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::config(key, format!("expected a finite number, got `{value}`")))
}

fn count(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::config(key, format!("expected a non-negative integer, got `{value}`")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

fn list(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| number(key, v.trim())).collect()
}

/// `re` or `re, im`.
fn complex(key: &str, value: &str) -> Result<C64> {
    match list(key, value)?.as_slice() {
        [re] => Ok(C64::new(*re, 0.0)),
        [re, im] => Ok(C64::new(*re, *im)),
        _ => Err(Error::config(key, format!("expected `re` or `re, im`, got `{value}`"))),
    }
}

/// Shortest round-trip form, exponent notation for very large or small values.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|&v| num(v)).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Defaults shared by every run; physical parameters are placeholders
    /// that must be overridden unless the desk preset is used.
    fn base() -> Self {
        let half = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            preset: None,
            params: PhysicalParams {
                mass: f64::NAN,
                gamma: f64::NAN,
                temperature: f64::NAN,
                hbar: HBAR_CODATA,
                boltzmann: BOLTZMANN_CODATA,
            },
            grid: SpatialGrid::new(256, 64.0).expect("valid default grid"),
            evolution: EvolutionConfig::default(),
            state: StateConfig {
                kind: StateKind::Cat,
                delta_x: 8.0,
                halfwidth: 1.0,
                sigma: 8.0,
                center: 0.0,
                momentum: 0.0,
            },
            window: CoherenceWindow::default(),
            sweep: SweepConfig {
                n_values: vec![2.0, 4.0, 8.0],
                hbar_values: vec![1.0, 0.562_341_325_190_349, 0.316_227_766_016_838, 0.177_827_941_003_892, 0.1],
                simulate_hbar: vec![1.0, 0.5],
            },
            measure: MeasureConfig {
                delta_x: 16.0,
                a0: C64::new(half, 0.0),
                a1: C64::new(half, 0.0),
                sigma: 1.0,
                center: None,
            },
            output_dir: PathBuf::from("."),
            checkpoint: false,
            workers: 1,
        }
    }

    /// Natural units `ħ = m = k = 1`, `T = 1/4` so `λ_dB = 1`, `γ = 0.01`.
    pub fn desk() -> Self {
        Self {
            preset: Some("desk".into()),
            params: PhysicalParams::desk(),
            ..Self::base()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            other => Err(Error::config("preset", format!("unknown preset `{other}`; available: desk"))),
        }
    }

    /// Layer `text` over the preset (or the bare defaults) and validate.
    pub fn from_text(text: &str, preset: Option<&str>) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = match preset {
            Some(name) => Self::preset(name)?,
            None => {
                for key in REQUIRED_WITHOUT_PRESET {
                    if !pairs.iter().any(|(k, _)| k == key) {
                        return Err(Error::config(key, "missing; set it or use the desk preset"));
                    }
                }
                if !pairs.iter().any(|(k, _)| k == "physics.gamma" || k == "physics.tau") {
                    return Err(Error::config("physics.gamma", "missing; set physics.gamma or physics.tau"));
                }
                Self::base()
            }
        };
        if pairs.iter().any(|(k, _)| k == "physics.gamma") && pairs.iter().any(|(k, _)| k == "physics.tau") {
            return Err(Error::config("physics.tau", "give either physics.gamma or physics.tau, not both"));
        }
        for (key, value) in &pairs {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text, preset)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let n = || number(key, value);
        match key {
            "physics.mass" => self.params.mass = n()?,
            "physics.temperature" => self.params.temperature = n()?,
            "physics.gamma" => self.params.gamma = n()?,
            "physics.tau" => {
                let tau = n()?;
                if !(tau > 0.0) {
                    return Err(Error::config(key, format!("must be positive, got {tau}")));
                }
                self.params.gamma = 0.5 / tau;
            }
            "physics.hbar" => self.params.hbar = n()?,
            "physics.boltzmann" => self.params.boltzmann = n()?,
            "grid.n_points" => self.grid = SpatialGrid::new(count(key, value)?, self.grid.extent())?,
            "grid.extent" => self.grid = SpatialGrid::new(self.grid.n_points(), n()?)?,
            "evolution.dt" => self.evolution.dt = n()?,
            "evolution.n_steps" => self.evolution.n_steps = count(key, value)?,
            "evolution.sample_every" => self.evolution.sample_every = count(key, value)?,
            "evolution.kinetic" => self.evolution.enable_kinetic = flag(key, value)?,
            "evolution.dissipation" => self.evolution.enable_dissipation = flag(key, value)?,
            "evolution.decoherence" => self.evolution.enable_decoherence = flag(key, value)?,
            "evolution.renormalize" => self.evolution.renormalize = flag(key, value)?,
            "evolution.pi_variant" => self.evolution.coefficient_pi_variant = flag(key, value)?,
            "state.kind" => {
                self.state.kind = StateKind::parse(value)
                    .ok_or_else(|| Error::config(key, format!("expected cat, gaussian or mixture, got `{value}`")))?
            }
            "state.delta_x" => self.state.delta_x = n()?,
            "state.halfwidth" => self.state.halfwidth = n()?,
            "state.sigma" => self.state.sigma = n()?,
            "state.center" => self.state.center = n()?,
            "state.momentum" => self.state.momentum = n()?,
            "fit.coherence_low" => self.window.low = n()?,
            "fit.coherence_high" => self.window.high = n()?,
            "sweep.n_values" => self.sweep.n_values = list(key, value)?,
            "sweep.hbar_values" => self.sweep.hbar_values = list(key, value)?,
            "sweep.simulate_hbar" => self.sweep.simulate_hbar = list(key, value)?,
            "measure.delta_x" => self.measure.delta_x = n()?,
            "measure.a0" => self.measure.a0 = complex(key, value)?,
            "measure.a1" => self.measure.a1 = complex(key, value)?,
            "measure.sigma" => self.measure.sigma = n()?,
            "measure.center" => self.measure.center = if value == "auto" { None } else { Some(n()?) },
            "output.dir" => self.output_dir = PathBuf::from(value),
            "output.checkpoint" => self.checkpoint = flag(key, value)?,
            "run.workers" => self.workers = count(key, value)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Checks that do not depend on which experiment runs. Step limits are
    /// checked when an evolution starts, since sweeps choose their own.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        };
        positive("physics.mass", p.mass)?;
        positive("physics.temperature", p.temperature)?;
        positive("physics.hbar", p.hbar)?;
        positive("physics.boltzmann", p.boltzmann)?;
        if !(p.gamma.is_finite() && p.gamma >= 0.0) {
            return Err(Error::config("physics.gamma", format!("must be non-negative, got {}", p.gamma)));
        }
        positive("evolution.dt", self.evolution.dt)?;
        if self.evolution.sample_every == 0 {
            return Err(Error::config("evolution.sample_every", "must be at least 1"));
        }
        positive("state.halfwidth", self.state.halfwidth)?;
        positive("state.sigma", self.state.sigma)?;
        if !(self.state.delta_x >= 0.0) {
            return Err(Error::config("state.delta_x", "must be non-negative"));
        }
        positive("measure.sigma", self.measure.sigma)?;
        self.window.validate()?;
        if self.workers == 0 {
            return Err(Error::config("run.workers", "must be at least 1"));
        }
        let norm = self.measure.a0.norm_sqr() + self.measure.a1.norm_sqr();
        if (norm - 1.0).abs() > crate::measurement::AMPLITUDE_TOLERANCE {
            return Err(Error::config("measure.a0", format!("|a0|^2 + |a1|^2 = {norm}, must be 1")));
        }
        Ok(())
    }

    /// Every resolved key that affects results as `key=value`,
    /// `; `-separated, for CSV headers. The output directory and worker
    /// count are left out so identical physics gives identical files.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        if let Some(p) = &self.preset {
            let _ = write!(out, "preset={p}; ");
        }
        let values = self.resolved();
        let parts: Vec<String> = values
            .iter()
            .filter(|(k, _)| !matches!(*k, "output.dir" | "run.workers"))
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        out.push_str(&parts.join("; "));
        out
    }

    /// Resolved values in [`KEYS`] order; damping is always reported as
    /// `physics.gamma`.
    pub fn resolved(&self) -> Vec<(&'static str, String)> {
        let p = &self.params;
        let e = &self.evolution;
        let s = &self.state;
        let c = |z: C64| format!("{},{}", num(z.re), num(z.im));
        KEYS.iter()
            .filter(|&&k| k != "physics.tau")
            .map(|&k| {
                let v = match k {
                    "physics.mass" => num(p.mass),
                    "physics.temperature" => num(p.temperature),
                    "physics.gamma" => num(p.gamma),
                    "physics.hbar" => num(p.hbar),
                    "physics.boltzmann" => num(p.boltzmann),
                    "grid.n_points" => self.grid.n_points().to_string(),
                    "grid.extent" => num(self.grid.extent()),
                    "evolution.dt" => num(e.dt),
                    "evolution.n_steps" => e.n_steps.to_string(),
                    "evolution.sample_every" => e.sample_every.to_string(),
                    "evolution.kinetic" => e.enable_kinetic.to_string(),
                    "evolution.dissipation" => e.enable_dissipation.to_string(),
                    "evolution.decoherence" => e.enable_decoherence.to_string(),
                    "evolution.renormalize" => e.renormalize.to_string(),
                    "evolution.pi_variant" => e.coefficient_pi_variant.to_string(),
                    "state.kind" => s.kind.name().to_string(),
                    "state.delta_x" => num(s.delta_x),
                    "state.halfwidth" => num(s.halfwidth),
                    "state.sigma" => num(s.sigma),
                    "state.center" => num(s.center),
                    "state.momentum" => num(s.momentum),
                    "fit.coherence_low" => num(self.window.low),
                    "fit.coherence_high" => num(self.window.high),
                    "sweep.n_values" => fmt_list(&self.sweep.n_values),
                    "sweep.hbar_values" => fmt_list(&self.sweep.hbar_values),
                    "sweep.simulate_hbar" => fmt_list(&self.sweep.simulate_hbar),
                    "measure.delta_x" => num(self.measure.delta_x),
                    "measure.a0" => c(self.measure.a0),
                    "measure.a1" => c(self.measure.a1),
                    "measure.sigma" => num(self.measure.sigma),
                    "measure.center" => self.measure.center.map_or("auto".to_string(), num),
                    "output.dir" => self.output_dir.display().to_string(),
                    "output.checkpoint" => self.checkpoint.to_string(),
                    "run.workers" => self.workers.to_string(),
                    _ => unreachable!("every key is echoed"),
                };
                (k, v)
            })
            .collect()
    }

    pub fn measure_center(&self) -> f64 {
        self.measure.center.unwrap_or(-0.5 * self.measure.delta_x)
    }
}
