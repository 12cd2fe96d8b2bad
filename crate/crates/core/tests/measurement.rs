use qbm::analytic::PhysicalParams;
use qbm::grid::{DensityGrid, SpatialGrid, C64};
use qbm::master::EvolutionConfig;
use qbm::measurement::{evolve_joint, fit_cross_decay, impulsive_coupling, impulsive_coupling_pure, JointState, SystemState};
use qbm::state::{gaussian_packet, pure_density};

fn grid() -> SpatialGrid {
    SpatialGrid::new(128, 32.0).unwrap()
}

fn short_run() -> EvolutionConfig {
    EvolutionConfig {
        dt: 1.0 / 64.0,
        n_steps: 32,
        sample_every: 4,
        ..Default::default()
    }
}

#[test]
fn evolution_is_linear_in_the_apparatus_state() {
    let params = PhysicalParams::desk();
    let system = SystemState::new(C64::new(0.6, 0.0), C64::new(0.0, 0.8)).unwrap();
    let a = pure_density(&gaussian_packet(grid(), -4.0, 1.0, 0.0, 1.0).unwrap());
    let b = pure_density(&gaussian_packet(grid(), -2.0, 1.2, 0.3, 1.0).unwrap());
    let mix = DensityGrid {
        grid: grid(),
        values: &a.values * C64::new(0.3, 0.0) + &b.values * C64::new(0.7, 0.0),
    };
    let joint = |rho: &DensityGrid| evolve_joint(&impulsive_coupling(rho, system, 6.0).unwrap(), &params, &short_run()).unwrap();
    let (ea, eb, emix) = (joint(&a), joint(&b), joint(&mix));
    let mut combined: JointState = ea.final_state.clone();
    for s in 0..2 {
        for t in 0..2 {
            combined.blocks[s][t].values =
                &ea.final_state.blocks[s][t].values * C64::new(0.3, 0.0) + &eb.final_state.blocks[s][t].values * C64::new(0.7, 0.0);
        }
    }
    for s in 0..2 {
        for t in 0..2 {
            let d = emix.final_state.blocks[s][t].max_abs_diff(&combined.blocks[s][t]);
            assert!(d < 1e-8, "block {s}{t}: {d:e}");
        }
    }
    emix.final_state.check_invariants().unwrap();
}

#[test]
fn cross_decay_rate_independent_of_amplitudes() {
    let params = PhysicalParams::desk();
    let pointer = gaussian_packet(grid(), -4.0, 1.0, 0.0, 1.0).unwrap();
    let config = EvolutionConfig {
        n_steps: 256,
        sample_every: 2,
        enable_kinetic: false,
        enable_dissipation: false,
        ..Default::default()
    };
    let rate = |w0: f64| {
        let state = impulsive_coupling_pure(&pointer, SystemState::with_weight(w0).unwrap(), 8.0).unwrap();
        fit_cross_decay(&evolve_joint(&state, &params, &config).unwrap().trajectory).unwrap().rate
    };
    let (half, tenth) = (rate(0.5), rate(0.1));
    assert!((half / tenth - 1.0).abs() < 0.02, "{half} vs {tenth}");
    assert!((half / (0.005 * 64.0) - 1.0).abs() < 0.1, "{half}");
}

#[test]
fn cross_norm_constant_without_bath() {
    let params = PhysicalParams {
        gamma: 0.0,
        ..PhysicalParams::desk()
    };
    let pointer = gaussian_packet(grid(), -3.0, 1.0, 0.0, 1.0).unwrap();
    let state = impulsive_coupling_pure(&pointer, SystemState::with_weight(0.5).unwrap(), 6.0).unwrap();
    let run = evolve_joint(&state, &params, &short_run()).unwrap();
    let cross = run.trajectory.series("cross01_norm").unwrap();
    assert!(cross.iter().all(|c| (c - cross[0]).abs() < 1e-8));
    assert!((cross[0] - 0.5).abs() < 1e-10);
}

#[test]
fn long_time_state_is_the_measured_mixture() {
    let params = PhysicalParams::desk();
    let pointer = gaussian_packet(grid(), -8.0, 1.0, 0.0, 1.0).unwrap();
    let state = impulsive_coupling_pure(&pointer, SystemState::with_weight(0.5).unwrap(), 16.0).unwrap();
    let config = EvolutionConfig {
        n_steps: 640,
        sample_every: 64,
        enable_kinetic: false,
        enable_dissipation: false,
        ..Default::default()
    };
    let run = evolve_joint(&state, &params, &config).unwrap();
    let cross = run.trajectory.series("cross01_norm").unwrap();
    assert!(cross.last().unwrap() / cross[0] < 1e-4);
    // Without spreading the diagonal blocks keep their diagonals exactly.
    for s in 0..2 {
        let (d0, d1) = (state.blocks[s][s].diagonal(), run.final_state.blocks[s][s].diagonal());
        assert!(d0.iter().zip(d1.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
    let dist = run.trajectory.series("ideal_distance").unwrap();
    assert!(dist.windows(2).all(|w| w[1] <= w[0]));
    let l1 = run.final_state.l1_distance(&run.final_state.dephased());
    assert!((l1 - dist.last().unwrap()).abs() < 1e-10);
}
