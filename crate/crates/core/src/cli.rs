//! Command-line experiments. Each command writes CSV under the output
//! directory and returns a short human-readable summary.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::analytic::{classical_limit_sweep, decoherence_time, thermal_de_broglie, thermal_wavelength, PhysicalParams};
use crate::config::{RunConfig, StateKind, SWEEP_N_ALLOWED};
use crate::error::{Error, Result};
use crate::io::{save_density, write_diagonal_csv};
use crate::master::{evolve, EvolutionConfig};
use crate::measurement::{evolve_joint_mixture, fit_cross_decay, impulsive_coupling_pure, prepared_wavelets, SystemState};
use crate::observables::{fit_power_law, measure_timescales, operational_relaxation_time, plan_coherence_run, Probe, TimescaleMeasurement, Trajectory};
use crate::state::{gaussian_packet, incoherent_mixture, pure_density, CatState};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "qbm", version, about = "Decoherence and relaxation of a free particle in a thermal bath")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// `key = value` config file layered over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Parallel sweep points; overrides `run.workers`.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Built-in parameter set to start from (`desk`).
    #[arg(long, global = true)]
    pub preset: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form λ_dB, θ, τ and θ/τ.
    Timescales,
    /// Evolve the configured initial state and record observables.
    Evolve,
    /// Fit θ⁻¹ for cat states `N` thermal wavelengths wide.
    SweepRatio {
        /// Overrides `sweep.n_values`.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<f64>>,
    },
    /// Tabulate θ as ħ → 0 and confirm selected points by simulation.
    SweepHbar {
        /// Overrides `sweep.hbar_values`.
        #[arg(long, value_delimiter = ',')]
        hbar: Option<Vec<f64>>,
        /// Skip the confirming simulations.
        #[arg(long)]
        no_simulate: bool,
    },
    /// Impulsive measurement of a two-level system by a monitored pointer.
    Measure,
}

/// 0 on success, 2 for configuration errors, 3 for runtime aborts.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => 2,
        _ => 3,
    }
}

/// Resolve the configuration for `cli`: preset, then file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let preset = cli.preset.as_deref();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path, preset)?,
        None => RunConfig::from_text("", preset)?,
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::config("--workers", "must be at least 1"));
        }
        cfg.workers = w;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<String> {
    let mut cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Timescales => cmd_timescales(&cfg),
        Command::Evolve => cmd_evolve(&cfg),
        Command::SweepRatio { n } => {
            if let Some(n) = n {
                cfg.sweep.n_values = n.clone();
            }
            cmd_sweep_ratio(&cfg)
        }
        Command::SweepHbar { hbar, no_simulate } => {
            if let Some(h) = hbar {
                cfg.sweep.hbar_values = h.clone();
            }
            if *no_simulate {
                cfg.sweep.simulate_hbar.clear();
            }
            cmd_sweep_hbar(&cfg)
        }
        Command::Measure => cmd_measure(&cfg),
    }
}

fn header_comment(cfg: &RunConfig, command: &str) -> String {
    format!("qbm {VERSION}; command={command}; {}", cfg.echo())
}

fn create(cfg: &RunConfig, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(BufWriter::new(File::create(cfg.output_dir.join(name))?))
}

/// A plain table: comment line, header, rows in 17-digit scientific notation.
fn write_table(cfg: &RunConfig, command: &str, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<PathBuf> {
    let mut out = create(cfg, name)?;
    writeln!(out, "# {}", header_comment(cfg, command))?;
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(cfg.output_dir.join(name))
}

/// Write `traj`, appending a truncation marker if the run aborted.
fn write_trajectory(cfg: &RunConfig, command: &str, name: &str, traj: &Trajectory, abort: Option<&Error>) -> Result<PathBuf> {
    let mut out = create(cfg, name)?;
    traj.write_csv(&mut out, &header_comment(cfg, command))?;
    if let Some(err) = abort {
        writeln!(out, "# TRUNCATED: {err}")?;
    }
    out.flush()?;
    Ok(cfg.output_dir.join(name))
}

fn relaxation_time(params: &PhysicalParams) -> Result<f64> {
    operational_relaxation_time(params).map_err(|_| Error::config("physics.gamma", "must be positive to define a relaxation time"))
}

pub fn cmd_timescales(cfg: &RunConfig) -> Result<String> {
    let p = &cfg.params;
    let dx = cfg.state.delta_x;
    if !(dx > 0.0) {
        return Err(Error::config("state.delta_x", "must be positive"));
    }
    let tau = relaxation_time(p)?;
    let lambda_db = thermal_de_broglie(p)?;
    let lambda_t = thermal_wavelength(p)?;
    let theta = decoherence_time(tau, dx, p)?;
    let row = vec![p.mass, p.temperature, dx, lambda_db, lambda_t, tau, theta, theta / tau];
    let header = ["mass", "temperature", "delta_x", "lambda_db", "lambda_t", "tau", "theta", "theta_over_tau"];
    let path = write_table(cfg, "timescales", "timescales.csv", &header, &[row])?;
    let mut s = String::new();
    let _ = writeln!(s, "lambda_dB     = {lambda_db:.6e}");
    let _ = writeln!(s, "lambda_T      = {lambda_t:.6e}");
    let _ = writeln!(s, "tau           = {tau:.6e}");
    let _ = writeln!(s, "theta         = {theta:.6e}");
    let _ = writeln!(s, "theta/tau     = {:.6e}", theta / tau);
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

fn initial_density(cfg: &RunConfig) -> Result<crate::grid::DensityGrid> {
    let st = &cfg.state;
    let hbar = cfg.params.hbar;
    match st.kind {
        StateKind::Cat => Ok(pure_density(&CatState::new(cfg.grid, st.delta_x, st.halfwidth, hbar)?.psi)),
        StateKind::Gaussian => Ok(pure_density(&gaussian_packet(cfg.grid, st.center, st.halfwidth, st.momentum, hbar)?)),
        StateKind::Mixture => incoherent_mixture(cfg.grid, st.sigma, st.halfwidth, hbar),
    }
}

pub fn cmd_evolve(cfg: &RunConfig) -> Result<String> {
    let rho0 = initial_density(cfg)?;
    let mut probes = Vec::new();
    if cfg.state.kind == StateKind::Cat {
        probes.push(Probe::coherence(cfg.state.delta_x));
    }
    probes.push(Probe::purity());
    probes.push(Probe::momentum(cfg.params.hbar));
    let name = "trajectory.csv";
    if cfg.evolution.n_steps == 0 {
        let empty = Trajectory::new(probes.iter().map(|p| p.name().to_string()).collect());
        let path = write_trajectory(cfg, "evolve", name, &empty, None)?;
        return Ok(format!("n_steps = 0: wrote header only to {}\n", path.display()));
    }
    let evolution = match evolve(&rho0, &cfg.params, &cfg.evolution, &probes) {
        Ok(ev) => ev,
        Err(err @ Error::TraceDrift { .. }) => {
            if let Error::TraceDrift { partial, .. } = &err {
                write_trajectory(cfg, "evolve", name, partial, Some(&err))?;
            }
            return Err(err);
        }
        Err(err) => return Err(err),
    };
    let path = write_trajectory(cfg, "evolve", name, &evolution.trajectory, None)?;
    let mut s = String::new();
    let traj = &evolution.trajectory;
    let t = traj.times().last().copied().unwrap_or(0.0);
    let _ = writeln!(s, "evolved to t = {t:.6e} in {} steps", cfg.evolution.n_steps);
    for name in traj.names() {
        let v = traj.series(name).and_then(|v| v.last()).copied().unwrap_or(f64::NAN);
        let _ = writeln!(s, "  final {name:<10} = {v:.10e}");
    }
    if cfg.checkpoint {
        save_density(&evolution.final_state, &cfg.output_dir.join("final_state.bin"))?;
        let mut out = create(cfg, "final_diagonal.csv")?;
        write_diagonal_csv(&evolution.final_state, &mut out)?;
        out.flush()?;
        let _ = writeln!(s, "wrote final_state.bin and final_diagonal.csv");
    }
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

fn worker_pool(cfg: &RunConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Diagnostic(format!("cannot start {} workers: {e}", cfg.workers)))
}

/// Reject empty, duplicate or unsupported separations before any run starts.
pub fn validate_n_values(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::config("sweep.n_values", "needs at least one value"));
    }
    for (i, n) in values.iter().enumerate() {
        if !SWEEP_N_ALLOWED.contains(n) {
            return Err(Error::config("sweep.n_values", format!("N = {n} not in {SWEEP_N_ALLOWED:?}")));
        }
        if values[..i].contains(n) {
            return Err(Error::config("sweep.n_values", format!("N = {n} given twice")));
        }
    }
    Ok(())
}

/// Fit `θ⁻¹` for a cat state of separation `Δx` under `params`.
fn coherence_run(cfg: &RunConfig, params: &PhysicalParams, base: &EvolutionConfig, delta_x: f64) -> Result<TimescaleMeasurement> {
    let cat = CatState::new(cfg.grid, delta_x, cfg.state.halfwidth, params.hbar)?;
    let plan = plan_coherence_run(base, params, delta_x, cfg.window)?;
    measure_timescales(&cat, params, &plan, cfg.window)
}

fn label_failure(label: String, err: Error) -> Error {
    match err {
        Error::Config { field, message } => Error::Config {
            field,
            message: format!("{label}: {message}"),
        },
        other => Error::Diagnostic(format!("{label} failed: {other}")),
    }
}

pub fn cmd_sweep_ratio(cfg: &RunConfig) -> Result<String> {
    validate_n_values(&cfg.sweep.n_values)?;
    let tau = relaxation_time(&cfg.params)?;
    let lambda = thermal_de_broglie(&cfg.params)?;
    for &n in &cfg.sweep.n_values {
        CatState::new(cfg.grid, n * lambda, cfg.state.halfwidth, cfg.params.hbar)
            .map_err(|e| label_failure(format!("sweep point N = {n}"), e))?;
    }
    let pool = worker_pool(cfg)?;
    let results: Vec<Result<TimescaleMeasurement>> = pool.install(|| {
        cfg.sweep
            .n_values
            .par_iter()
            .map(|&n| coherence_run(cfg, &cfg.params, &cfg.evolution, n * lambda).map_err(|e| label_failure(format!("sweep point N = {n}"), e)))
            .collect()
    });
    let mut rows = Vec::new();
    let mut s = String::new();
    let _ = writeln!(s, "tau = {tau:.6e}");
    for (&n, result) in cfg.sweep.n_values.iter().zip(results) {
        let m = result?;
        write_trajectory(cfg, "sweep-ratio", &format!("coherence_N{n}.csv"), &m.trajectory, None)?;
        let _ = writeln!(
            s,
            "N = {n}: theta^-1 = {:.6e} (r^2 = {:.6}), tau/theta = {:.6e}",
            m.theta.rate, m.theta.r_squared, m.ratio
        );
        rows.push(vec![n, m.theta.rate, m.ratio, m.delta_x, m.theta.r_squared]);
    }
    let header = ["N", "fitted_theta_inverse", "ratio", "delta_x", "r_squared"];
    let path = write_table(cfg, "sweep-ratio", "sweep_ratio.csv", &header, &rows)?;
    if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let fit = fit_power_law(&x, &y)?;
        let _ = writeln!(s, "power-law exponent of theta^-1 vs N: {:.4} (r^2 = {:.6})", fit.exponent, fit.r_squared);
    }
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

/// `dt` halved from the configured value until the step-phase bound holds.
fn stable_config(base: &EvolutionConfig, params: &PhysicalParams, cfg: &RunConfig) -> Result<EvolutionConfig> {
    let limit = base.max_stable_dt(params, &cfg.grid)?;
    let mut c = *base;
    while c.dt > limit {
        c.dt *= 0.5;
    }
    if c.dt != base.dt {
        log::info!("hbar = {}: dt reduced to {} for the step-phase bound", params.hbar, c.dt);
    }
    Ok(c)
}

pub fn cmd_sweep_hbar(cfg: &RunConfig) -> Result<String> {
    let dx = cfg.state.delta_x;
    if !(dx > 0.0) {
        return Err(Error::config("state.delta_x", "must be positive"));
    }
    let tau = relaxation_time(&cfg.params)?;
    let table = classical_limit_sweep(&cfg.params, &cfg.sweep.hbar_values, dx, tau)
        .map_err(|e| Error::config("sweep.hbar_values", e.to_string()))?;
    let rows: Vec<Vec<f64>> = table.iter().map(|r| vec![r.hbar, r.lambda_db, r.theta, r.theta_over_tau]).collect();
    let path = write_table(cfg, "sweep-hbar", "sweep_hbar.csv", &["hbar", "lambda_db", "theta", "theta_over_tau"], &rows)?;
    let mut s = String::new();
    if table.len() >= 2 {
        let x: Vec<f64> = table.iter().map(|r| r.hbar).collect();
        let y: Vec<f64> = table.iter().map(|r| r.theta).collect();
        let _ = writeln!(s, "analytic exponent of theta vs hbar: {:.6}", fit_power_law(&x, &y)?.exponent);
    }
    let _ = writeln!(s, "wrote {}", path.display());
    if cfg.sweep.simulate_hbar.is_empty() {
        return Ok(s);
    }

    let pool = worker_pool(cfg)?;
    let results: Vec<Result<(f64, f64, f64)>> = pool.install(|| {
        cfg.sweep
            .simulate_hbar
            .par_iter()
            .map(|&h| {
                let label = format!("simulation at hbar = {h}");
                let params = cfg.params.with_hbar(h).map_err(|e| label_failure(label.clone(), e))?;
                let base = stable_config(&cfg.evolution, &params, cfg)?;
                let m = coherence_run(cfg, &params, &base, dx).map_err(|e| label_failure(label, e))?;
                let theta_an = decoherence_time(tau, dx, &params)?;
                // θ_analytic / θ_simulated tends to τ·D·λ_dB² for well-separated branches.
                let lambda = thermal_de_broglie(&params)?;
                let expected = tau * base.coefficient(&params)?.d_value * lambda * lambda;
                Ok((theta_an, 1.0 / m.theta.rate, expected))
            })
            .collect()
    });
    let mut sim_rows = Vec::new();
    for (&h, result) in cfg.sweep.simulate_hbar.iter().zip(results) {
        let (theta_an, theta_sim, expected) = result?;
        let agreement = expected * theta_sim / theta_an;
        let _ = writeln!(
            s,
            "hbar = {h}: theta analytic {theta_an:.6e}, simulated {theta_sim:.6e}, scaled agreement {agreement:.4}"
        );
        sim_rows.push(vec![h, dx, theta_an, theta_sim, agreement]);
    }
    if sim_rows.len() >= 2 {
        let x: Vec<f64> = sim_rows.iter().map(|r| r[0]).collect();
        let y: Vec<f64> = sim_rows.iter().map(|r| r[3]).collect();
        let _ = writeln!(s, "simulated exponent of theta vs hbar: {:.4}", fit_power_law(&x, &y)?.exponent);
    }
    let header = ["hbar", "delta_x", "theta_analytic", "theta_simulated", "agreement"];
    let path = write_table(cfg, "sweep-hbar", "sweep_hbar_sim.csv", &header, &sim_rows)?;
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

pub fn cmd_measure(cfg: &RunConfig) -> Result<String> {
    let m = &cfg.measure;
    let system = SystemState::new(m.a0, m.a1)?;
    let wavelets = prepared_wavelets(cfg.grid, m.sigma, cfg.measure_center(), &cfg.params)?;
    let components = wavelets
        .iter()
        .map(|w| impulsive_coupling_pure(w, system, m.delta_x))
        .collect::<Result<Vec<_>>>()?;
    let name = "measure.csv";
    if cfg.evolution.n_steps == 0 {
        let empty = Trajectory::new(crate::measurement::JOINT_SERIES.iter().map(|s| s.to_string()).collect());
        let path = write_trajectory(cfg, "measure", name, &empty, None)?;
        return Ok(format!("n_steps = 0: wrote header only to {}\n", path.display()));
    }
    let run = match evolve_joint_mixture(&components, &cfg.params, &cfg.evolution) {
        Ok(run) => run,
        Err(err @ Error::TraceDrift { .. }) => {
            if let Error::TraceDrift { partial, .. } = &err {
                write_trajectory(cfg, "measure", name, partial, Some(&err))?;
            }
            return Err(err);
        }
        Err(err) => return Err(err),
    };
    let mut traj = run.trajectory;
    traj.set_meta("delta_x", m.delta_x);
    traj.set_meta("pointer_wavelets", wavelets.len());
    let d = cfg.evolution.coefficient(&cfg.params)?.d_value;
    let mut s = String::new();
    let w = run.final_state.outcome_weights();
    let _ = writeln!(s, "outcome weights: {:.12} / {:.12}", w[0], w[1]);
    let cross = traj.series("cross01_norm").unwrap_or(&[]);
    if let (Some(first), Some(last)) = (cross.first(), cross.last()) {
        let relative = if *first > 0.0 { last / first } else { 0.0 };
        let _ = writeln!(s, "cross-block norm: {first:.6e} -> {last:.6e} (ratio {relative:.3e})");
        if *first > 0.0 {
            match fit_cross_decay(&traj) {
                Ok(fit) => {
                    traj.set_meta("cross_decay_rate", fit.rate);
                    let _ = writeln!(
                        s,
                        "cross-block decay rate {:.6e} = {:.4} x D*dx^2",
                        fit.rate,
                        fit.rate / (d * m.delta_x * m.delta_x)
                    );
                }
                Err(e) => {
                    let _ = writeln!(s, "cross-block decay rate: not fitted ({e})");
                }
            }
        }
    }
    if let Some(dist) = traj.series("ideal_distance").and_then(|v| v.last()) {
        let _ = writeln!(s, "distance to the measured mixture: {dist:.6e}");
    }
    let path = write_trajectory(cfg, "measure", name, &traj, None)?;
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

/// Parse arguments, run, print, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}
