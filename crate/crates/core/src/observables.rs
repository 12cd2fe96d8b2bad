//! Scalar probes of density matrices, sampled trajectories and rate fits.

use std::cell::OnceCell;
use std::io::Write;
use std::sync::Arc;

use ndarray::Array1;

use crate::analytic::PhysicalParams;
use crate::error::{Error, Result};
use crate::fft::{interpolate_at, transpose, Spectral};
use crate::grid::{DensityGrid, SpatialGrid, C64};
use crate::master::{EvolutionConfig, Propagator};
use crate::state::CatState;

/// Diagonal values below this are treated as empty.
pub const DEGENERATE_DIAGONAL: f64 = 1e-300;
/// Fits with `r²` below this are flagged.
pub const LOW_CONFIDENCE_R2: f64 = 0.98;
pub const MIN_FIT_SAMPLES: usize = 8;

/// Time-ordered samples of named scalar series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    names: Vec<String>,
    times: Vec<f64>,
    columns: Vec<Vec<f64>>,
    metadata: Vec<(String, String)>,
    renormalization: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn new(names: Vec<String>) -> Self {
        let columns = vec![Vec::new(); names.len()];
        Self {
            names,
            columns,
            ..Default::default()
        }
    }

    /// Append one sample. Panics if `t` does not increase or the row width is wrong.
    pub fn push(&mut self, t: f64, values: Vec<f64>) {
        assert_eq!(values.len(), self.names.len(), "one value per series");
        if let Some(&last) = self.times.last() {
            assert!(t > last, "sample times must increase: {t} after {last}");
        }
        self.times.push(t);
        for (column, v) in self.columns.iter_mut().zip(values) {
            column.push(v);
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.metadata.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.metadata.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn metadata(&self) -> &[(String, String)] {
        &self.metadata
    }

    pub fn log_renormalization(&mut self, t: f64, correction: f64) {
        self.renormalization.push((t, correction));
    }

    /// `(time, trace − 1)` before each renormalization.
    pub fn renormalization_log(&self) -> &[(f64, f64)] {
        &self.renormalization
    }

    /// CSV with a leading `# comment` line, metadata comments, a header and
    /// one row per sample in 17-significant-digit scientific notation.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: &str) -> std::io::Result<()> {
        writeln!(out, "# {comment}")?;
        for (k, v) in &self.metadata {
            writeln!(out, "# {k} = {v}")?;
        }
        if !self.renormalization.is_empty() {
            let total: f64 = self.renormalization.iter().map(|(_, c)| c.abs()).sum();
            writeln!(
                out,
                "# renormalizations = {}, cumulative |correction| = {total:.3e}",
                self.renormalization.len()
            )?;
        }
        write!(out, "time_s")?;
        for name in &self.names {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for (row, t) in self.times.iter().enumerate() {
            write!(out, "{t:.16e}")?;
            for column in &self.columns {
                write!(out, ",{:.16e}", column[row])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// A state as sampled during evolution: stored in co-moving coordinates,
/// with lab-frame quantities derived on demand.
pub struct Snapshot<'a> {
    stored: &'a DensityGrid,
    propagator: &'a Propagator,
    time: f64,
    lab: OnceCell<DensityGrid>,
}

impl<'a> Snapshot<'a> {
    pub fn new(stored: &'a DensityGrid, propagator: &'a Propagator, time: f64) -> Self {
        Self {
            stored,
            propagator,
            time,
            lab: OnceCell::new(),
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn grid(&self) -> SpatialGrid {
        self.stored.grid
    }

    pub fn frame_factor(&self) -> f64 {
        self.propagator.frame_factor(self.time)
    }

    pub fn stored(&self) -> &DensityGrid {
        self.stored
    }

    /// The lab-frame matrix (computed once).
    pub fn lab(&self) -> &DensityGrid {
        self.lab.get_or_init(|| self.propagator.to_lab(self.stored, self.time))
    }

    /// Lab-frame diagonal; the co-moving map leaves it unchanged.
    pub fn diagonal(&self) -> Array1<f64> {
        self.stored.diagonal()
    }

    pub fn trace(&self) -> C64 {
        self.stored.trace()
    }

    /// Lab-frame `ρ(x, y)` at an arbitrary point.
    pub fn value_at(&self, x: f64, y: f64) -> C64 {
        let f = self.frame_factor();
        if let (true, Some(i), Some(j)) = (f == 1.0, self.grid().nearest_index(x), self.grid().nearest_index(y)) {
            if self.grid().position(i) == x && self.grid().position(j) == y {
                return self.stored.values[[i, j]];
            }
        }
        let (a, b) = (0.5 * (1.0 + f), 0.5 * (1.0 - f));
        interpolate_at(&self.stored.values, &self.grid(), a * x + b * y, b * x + a * y)
    }

    /// The co-moving map has Jacobian `f`.
    pub fn purity(&self) -> f64 {
        purity(self.stored) / self.frame_factor()
    }

    /// Momentum scales by `f` between the frames.
    pub fn momentum_expectation(&self, hbar: f64) -> f64 {
        self.frame_factor() * momentum_expectation_complex(self.stored, hbar).re
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.stored.hermiticity_error()
    }

    pub fn coherence_peak(&self, delta_x: f64) -> Result<f64> {
        let diag = self.diagonal();
        let grid = self.grid();
        let (ia, ib) = branch_anchors(&grid, &diag, &diag, delta_x);
        normalized_coherence(self.value_at(grid.position(ia), grid.position(ib)), diag[ia], diag[ib])
    }
}

type ProbeFn = dyn Fn(&Snapshot) -> Result<f64> + Send + Sync;

/// A named scalar observable sampled during evolution.
#[derive(Clone)]
pub struct Probe {
    name: String,
    f: Arc<ProbeFn>,
}

impl std::fmt::Debug for Probe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Probe").field("name", &self.name).finish()
    }
}

impl Probe {
    pub fn new(name: impl Into<String>, f: impl Fn(&Snapshot) -> Result<f64> + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sample(&self, snapshot: &Snapshot) -> Result<f64> {
        (self.f)(snapshot)
    }

    pub fn coherence(delta_x: f64) -> Self {
        Probe::new("coherence", move |s| s.coherence_peak(delta_x))
    }

    pub fn purity() -> Self {
        Probe::new("purity", |s| Ok(s.purity()))
    }

    pub fn momentum(hbar: f64) -> Self {
        Probe::new("p_expect", move |s| Ok(s.momentum_expectation(hbar)))
    }

    pub fn trace() -> Self {
        Probe::new("trace", |s| Ok(s.trace().re))
    }

    pub fn hermiticity() -> Self {
        Probe::new("hermiticity_error", |s| Ok(s.hermiticity_error()))
    }
}

/// Grid index with the largest diagonal value within `Δx/4` of `center`.
fn diagonal_anchor(grid: &SpatialGrid, diag: &Array1<f64>, center: f64, reach: f64) -> usize {
    (0..grid.n_points())
        .filter(|&i| (grid.position(i) - center).abs() <= reach)
        .max_by(|&a, &b| diag[a].total_cmp(&diag[b]))
        .or_else(|| grid.nearest_index(center))
        .unwrap_or(grid.n_points() / 2)
}

/// Anchors of the `+Δx/2` and `−Δx/2` branches on their diagonals.
fn branch_anchors(grid: &SpatialGrid, diag_plus: &Array1<f64>, diag_minus: &Array1<f64>, delta_x: f64) -> (usize, usize) {
    let reach = 0.25 * delta_x.abs();
    (
        diagonal_anchor(grid, diag_plus, 0.5 * delta_x, reach),
        diagonal_anchor(grid, diag_minus, -0.5 * delta_x, reach),
    )
}

fn normalized_coherence(off_diagonal: C64, d_plus: f64, d_minus: f64) -> Result<f64> {
    if !(d_plus > DEGENERATE_DIAGONAL && d_minus > DEGENERATE_DIAGONAL) {
        return Err(Error::Diagnostic(format!(
            "diagonal values {d_plus:.3e}, {d_minus:.3e} too small to normalize coherence"
        )));
    }
    Ok(off_diagonal.norm() / (d_plus * d_minus).sqrt())
}

/// `|ρ(x₊, x₋)| / √(ρ(x₊, x₊) ρ(x₋, x₋))`, where `x±` are the diagonal maxima
/// within `Δx/4` of `±Δx/2`. Equals 1 for any pure state.
pub fn coherence_peak(rho: &DensityGrid, delta_x: f64) -> Result<f64> {
    let diag = rho.diagonal();
    let (ia, ib) = branch_anchors(&rho.grid, &diag, &diag, delta_x);
    normalized_coherence(rho.values[[ia, ib]], diag[ia], diag[ib])
}

/// Coherence between two separately evolved branches.
///
/// `plus` and `minus` are the diagonal blocks of the branches at `±Δx/2`,
/// `cross` the block between them; by linearity these evolve independently
/// of each other and of the branch weights.
pub fn branch_coherence(plus: &Snapshot, cross: &Snapshot, minus: &Snapshot, delta_x: f64) -> Result<f64> {
    let grid = plus.grid();
    let (dp, dm) = (plus.diagonal(), minus.diagonal());
    let (ia, ib) = branch_anchors(&grid, &dp, &dm, delta_x);
    normalized_coherence(cross.value_at(grid.position(ia), grid.position(ib)), dp[ia], dm[ib])
}

/// `Tr(p ρ) = −iħ ∫ ∂x ρ(x, y)|_{y=x} dx`; the imaginary part measures
/// non-Hermiticity.
pub fn momentum_expectation_complex(rho: &DensityGrid, hbar: f64) -> C64 {
    let grid = rho.grid;
    let n = grid.n_points();
    let spectral = Spectral::new(grid);
    let mut data = rho.values.as_slice().expect("standard layout").to_vec();
    let mut scratch = vec![C64::new(0.0, 0.0); n * n];
    transpose(&mut data, &mut scratch, n);
    spectral.rows(&mut data, false);
    let norm = 1.0 / n as f64;
    let ik: Vec<C64> = (0..n)
        .map(|m| if m == n / 2 { C64::new(0.0, 0.0) } else { C64::new(0.0, grid.wavenumber(m) * norm) })
        .collect();
    for row in data.chunks_mut(n) {
        for (z, d) in row.iter_mut().zip(&ik) {
            *z *= d;
        }
    }
    spectral.rows(&mut data, true);
    let trace: C64 = (0..n).map(|i| data[i * n + i]).sum();
    C64::new(0.0, -hbar) * trace * grid.spacing()
}

pub fn momentum_expectation(rho: &DensityGrid, params: &PhysicalParams) -> f64 {
    momentum_expectation_complex(rho, params.hbar).re
}

/// `ρ(x, x)`.
pub fn position_distribution(rho: &DensityGrid) -> Array1<f64> {
    rho.diagonal()
}

/// `spacing² Σ |ρ|²`.
pub fn purity(rho: &DensityGrid) -> f64 {
    let h = rho.grid.spacing();
    rho.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * h * h
}

/// Operational relaxation time `τ = 1/(2γ)`, the e-folding time of `⟨p⟩`.
pub fn operational_relaxation_time(params: &PhysicalParams) -> Result<f64> {
    if !(params.gamma > 0.0) {
        return Err(Error::domain("relaxation time is infinite for gamma = 0"));
    }
    Ok(1.0 / (2.0 * params.gamma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub n_samples: usize,
    /// Standard error of `rate` from the residual scatter.
    pub rate_std_error: f64,
    pub low_confidence: bool,
}

struct LineFit {
    slope: f64,
    intercept: f64,
    r_squared: f64,
    slope_std_error: f64,
}

fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    let slope_std_error = if x.len() > 2 { (ss_res / (n - 2.0) / sxx).sqrt() } else { f64::INFINITY };
    LineFit {
        slope,
        intercept,
        r_squared,
        slope_std_error,
    }
}

/// Least-squares line through `(t, ln s)`; `rate = −slope`.
pub fn fit_exponential_samples(times: &[f64], values: &[f64]) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(Error::domain("times and values differ in length"));
    }
    if times.len() < MIN_FIT_SAMPLES {
        return Err(Error::domain(format!(
            "need at least {MIN_FIT_SAMPLES} samples to fit a rate, got {}",
            times.len()
        )));
    }
    if let Some(bad) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::domain(format!("cannot take the log of sample {bad}")));
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let line = fit_line(times, &logs);
    Ok(RateFit {
        rate: -line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        window: (times[0], times[times.len() - 1]),
        n_samples: times.len(),
        rate_std_error: line.slope_std_error,
        low_confidence: line.r_squared < LOW_CONFIDENCE_R2,
    })
}

/// Fit the samples of `series` with `t` in the closed `window`.
pub fn fit_exponential_rate(traj: &Trajectory, series: &str, window: (f64, f64)) -> Result<RateFit> {
    let values = traj
        .series(series)
        .ok_or_else(|| Error::domain(format!("trajectory has no series `{series}`")))?;
    let (t, v): (Vec<f64>, Vec<f64>) = traj
        .times()
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .unzip();
    let fit = fit_exponential_samples(&t, &v)?;
    if fit.low_confidence {
        log::warn!("fit of `{series}` has r^2 = {:.4}", fit.r_squared);
    }
    Ok(fit)
}

/// The time span over which `series` first falls through `[low, high]`:
/// from the first sample `≤ high` to the last later sample `≥ low`.
pub fn band_window(traj: &Trajectory, series: &str, low: f64, high: f64) -> Option<(f64, f64)> {
    let values = traj.series(series)?;
    let start = values.iter().position(|&v| v <= high)?;
    let end = (start..values.len()).take_while(|&i| values[i] >= low).last()?;
    Some((traj.times()[start], traj.times()[end]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::domain("power-law fit needs at least two matching points"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::domain("power-law fit needs positive data"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let line = fit_line(&lx, &ly);
    Ok(PowerLawFit {
        exponent: line.slope,
        prefactor: line.intercept.exp(),
        r_squared: line.r_squared,
    })
}

/// Coherence band used to fit the decoherence rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceWindow {
    pub low: f64,
    pub high: f64,
}

impl Default for CoherenceWindow {
    fn default() -> Self {
        Self { low: 0.8, high: 0.98 }
    }
}

impl CoherenceWindow {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.low && self.low < self.high && self.high < 1.0) {
            return Err(Error::config(
                "fit.coherence_low",
                format!("need 0 < low < high < 1, got [{}, {}]", self.low, self.high),
            ));
        }
        Ok(())
    }
}

/// Step count and sampling stride for a coherence run at `Δx`.
///
/// The run length allows three times the decoherence-only time to reach
/// the bottom of the window; runs stop as soon as the window is crossed.
pub fn plan_coherence_run(
    base: &EvolutionConfig,
    params: &PhysicalParams,
    delta_x: f64,
    window: CoherenceWindow,
) -> Result<EvolutionConfig> {
    let rate = base.coefficient(params)?.d_value * delta_x * delta_x;
    if !(rate > 0.0) {
        return Err(Error::domain("coherence does not decay without decoherence"));
    }
    let in_window = (window.high / window.low).ln() / rate;
    let sample_every = ((in_window / base.dt / 48.0).floor() as usize).max(1);
    let t_end = 3.0 * (1.0 / window.low).ln() / rate;
    let n_steps = ((t_end / base.dt / sample_every as f64).ceil() as usize).max(1) * sample_every;
    Ok(EvolutionConfig {
        n_steps,
        sample_every,
        ..*base
    })
}

#[derive(Debug, Clone)]
pub struct TimescaleMeasurement {
    pub delta_x: f64,
    /// Fitted decay of the coherence; `theta.rate` is `θ⁻¹`.
    pub theta: RateFit,
    pub tau_operational: f64,
    /// `τ_operational / θ`.
    pub ratio: f64,
    /// Fitted decay rate of the `+Δx/2` diagonal peak over the same window.
    pub diagonal_rate: Option<RateFit>,
    pub trajectory: Trajectory,
}

/// Evolve the branches of `cat` and fit the coherence decay.
///
/// Samples `coherence`, the two diagonal peaks, the largest trace drift and
/// Hermiticity error of the diagonal blocks. Stops once the coherence falls
/// below `window.low`.
pub fn measure_timescales(
    cat: &CatState,
    params: &PhysicalParams,
    config: &EvolutionConfig,
    window: CoherenceWindow,
) -> Result<TimescaleMeasurement> {
    window.validate()?;
    let tau = operational_relaxation_time(params)?;
    let grid = cat.psi.grid;
    let propagator = Propagator::new(grid, params, config)?;
    let delta_x = cat.delta_x;
    let mut blocks = [
        crate::state::outer(&cat.alpha, &cat.alpha),
        crate::state::outer(&cat.alpha, &cat.beta),
        crate::state::outer(&cat.beta, &cat.beta),
    ];
    let initial_traces = [blocks[0].trace().re, blocks[2].trace().re];
    let names = ["coherence", "diag_plus", "diag_minus", "trace_drift", "hermiticity_error"];
    let mut traj = Trajectory::new(names.iter().map(|s| s.to_string()).collect());
    traj.set_meta("delta_x", delta_x);
    traj.set_meta("halfwidth", cat.halfwidth);
    traj.set_meta("tau_operational", format!("{tau} (1/(2 gamma))"));
    traj.set_meta("coherence_window", format!("[{}, {}]", window.low, window.high));
    let mut last_drift = 0.0;
    let t_reached = propagator.run(&mut blocks, |t, blocks| {
        let plus = Snapshot::new(&blocks[0], &propagator, t);
        let cross = Snapshot::new(&blocks[1], &propagator, t);
        let minus = Snapshot::new(&blocks[2], &propagator, t);
        let c = branch_coherence(&plus, &cross, &minus, delta_x)?;
        let drift = (plus.trace().re - initial_traces[0]).abs().max((minus.trace().re - initial_traces[1]).abs());
        if (drift - last_drift).abs() > crate::master::TRACE_DRIFT_TOLERANCE {
            return Err(Error::TraceDrift {
                time: t,
                drift,
                tolerance: crate::master::TRACE_DRIFT_TOLERANCE,
                partial: Box::new(traj.clone()),
            });
        }
        last_drift = drift;
        let (ia, ib) = branch_anchors(&grid, &plus.diagonal(), &minus.diagonal(), delta_x);
        let herm = plus.hermiticity_error().max(minus.hermiticity_error());
        traj.push(t, vec![c, blocks[0].values[[ia, ia]].re, blocks[2].values[[ib, ib]].re, drift, herm]);
        Ok(c >= window.low)
    })?;

    let coherence = traj.series("coherence").expect("recorded");
    if coherence.iter().all(|&c| c > window.high) {
        let rate = config.coefficient(params)?.d_value * delta_x * delta_x;
        let suggested = (3.0 * (1.0 / window.low).ln() / rate / config.dt).ceil() as usize;
        return Err(Error::RunTooShort {
            threshold: window.high,
            t_end: t_reached,
            suggested_steps: suggested.max(config.n_steps * 2),
        });
    }
    let span = band_window(&traj, "coherence", window.low, window.high).expect("coherence entered the window");
    let theta = fit_exponential_rate(&traj, "coherence", span).map_err(|e| match e {
        Error::Domain(msg) => {
            log::warn!("coherence fit failed: {msg}");
            Error::RunTooShort {
                threshold: window.low,
                t_end: t_reached,
                suggested_steps: config.n_steps * 2,
            }
        }
        other => other,
    })?;
    let diagonal_rate = fit_exponential_rate(&traj, "diag_plus", span).ok();
    traj.set_meta("theta_inverse", theta.rate);
    Ok(TimescaleMeasurement {
        delta_x,
        theta,
        tau_operational: tau,
        ratio: tau * theta.rate,
        diagonal_rate,
        trajectory: traj,
    })
}
