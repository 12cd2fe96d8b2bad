use ndarray::Array2;
use proptest::prelude::*;

use qbm::analytic::{classical_limit_sweep, decoherence_time, thermal_de_broglie, timescale_ratio, PhysicalParams};
use qbm::fft::Spectral;
use qbm::grid::{DensityGrid, SpatialGrid, C64};
use qbm::io::{read_density, write_density};
use qbm::master::{evolve, pure_decoherence_exact, DecoherenceCoefficient, EvolutionConfig};
use qbm::observables::{fit_exponential_samples, Probe};
use qbm::state::{cat_state, pure_density};

fn small_grid() -> SpatialGrid {
    SpatialGrid::new(64, 16.0).unwrap()
}

fn arbitrary_matrix(n: usize, seed: &[f64]) -> Array2<C64> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        let a = seed[(i * 7 + j) % seed.len()];
        C64::new(a * (i as f64 + 1.0).sin(), a * (j as f64 - 2.0).cos())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn density_file_round_trip(seed in prop::collection::vec(-1e3f64..1e3, 1..20), extent in 1.0f64..100.0) {
        let grid = SpatialGrid::new(16, extent).unwrap();
        let rho = DensityGrid { grid, values: arbitrary_matrix(16, &seed) };
        let mut bytes = Vec::new();
        write_density(&rho, &mut bytes).unwrap();
        let back = read_density(bytes.as_slice()).unwrap();
        prop_assert_eq!(back, rho);
    }

    #[test]
    fn wavelength_scales_as_inverse_root_mass(mass in 1e-30f64..1e3, scale in 1e-3f64..1e3, t in 1e-3f64..1e4) {
        let p = PhysicalParams::new(mass, 1.0, t).unwrap();
        let q = PhysicalParams { mass: mass * scale, ..p };
        let a = thermal_de_broglie(&p).unwrap();
        let b = thermal_de_broglie(&q).unwrap();
        prop_assert!((b * scale.sqrt() / a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_is_squared_separation(mass in 1e-6f64..1e3, temp in 1.0f64..1e3, n in 0.1f64..1e3, tau in 1e-3f64..1e3) {
        let p = PhysicalParams::new(mass, 1.0, temp).unwrap();
        let lambda = thermal_de_broglie(&p).unwrap();
        let theta = decoherence_time(tau, n * lambda, &p).unwrap();
        prop_assert!((tau / theta / (n * n) - 1.0).abs() < 1e-12);
        prop_assert!((timescale_ratio(n * lambda, lambda).unwrap() / (n * n) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classical_sweep_is_monotone(start in 0.1f64..10.0, factor in 0.1f64..0.9, len in 2usize..10) {
        let hbars: Vec<f64> = (0..len).map(|i| start * factor.powi(i as i32)).collect();
        let rows = classical_limit_sweep(&PhysicalParams::desk(), &hbars, 3.0, 50.0).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[1].theta < w[0].theta);
            prop_assert!(w[1].theta_over_tau < w[0].theta_over_tau);
            prop_assert!(w[1].lambda_db < w[0].lambda_db);
        }
    }

    #[test]
    fn pure_decoherence_is_a_semigroup(t1 in 0.0f64..5.0, t2 in 0.0f64..5.0, dx in 1.0f64..4.0) {
        let rho = pure_density(&cat_state(small_grid(), dx, 0.8, 1.0).unwrap());
        let c = DecoherenceCoefficient::new(&PhysicalParams::desk()).unwrap();
        let once = pure_decoherence_exact(&rho, c, t1 + t2);
        let twice = pure_decoherence_exact(&pure_decoherence_exact(&rho, c, t1), c, t2);
        prop_assert!(once.max_abs_diff(&twice) < 1e-14);
    }

    #[test]
    fn shifts_compose(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let grid = small_grid();
        let spectral = Spectral::new(grid);
        let x = grid.positions();
        let row: Vec<C64> = x.iter().map(|&x| C64::new((-x * x).exp(), 0.0)).collect();
        let mut step = row.clone();
        spectral.shift_rows(&mut step, &[a]);
        spectral.shift_rows(&mut step, &[b]);
        let mut direct = row;
        spectral.shift_rows(&mut direct, &[a + b]);
        let err = step.iter().zip(&direct).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-12);
    }

    #[test]
    fn fit_recovers_synthetic_rate(rate in 0.01f64..10.0, amp in 0.1f64..10.0, n in 8usize..64) {
        let t: Vec<f64> = (0..n).map(|i| i as f64 / (n as f64 * rate)).collect();
        let v: Vec<f64> = t.iter().map(|t| amp * (-rate * t).exp()).collect();
        let fit = fit_exponential_samples(&t, &v).unwrap();
        prop_assert!((fit.rate / rate - 1.0).abs() < 1e-9);
        prop_assert!(fit.r_squared > 1.0 - 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn evolution_keeps_trace_and_hermiticity(
        dx in 0.0f64..4.0,
        gamma in 0.0f64..0.05,
        steps in 1usize..24,
        kinetic: bool,
        dissipation: bool,
    ) {
        let params = PhysicalParams { gamma, ..PhysicalParams::desk() };
        let rho = pure_density(&cat_state(small_grid(), dx, 1.0, 1.0).unwrap());
        let config = EvolutionConfig {
            dt: 1.0 / 64.0,
            n_steps: steps,
            enable_kinetic: kinetic,
            enable_dissipation: dissipation,
            ..Default::default()
        };
        let ev = evolve(&rho, &params, &config, &[Probe::trace(), Probe::hermiticity(), Probe::purity()]).unwrap();
        for &tr in ev.trajectory.series("trace").unwrap() {
            prop_assert!((tr - 1.0).abs() < 1e-10);
        }
        for &h in ev.trajectory.series("hermiticity_error").unwrap() {
            prop_assert!(h < 1e-10);
        }
        for &p in ev.trajectory.series("purity").unwrap() {
            prop_assert!(p <= 1.0 + 1e-10);
        }
        ev.final_state.check_invariants().unwrap();
    }
}
