//! Branch coherence against a closed-form solution of the full master
//! equation for Gaussian branches on an unbounded line, evaluated by
//! quadrature over the Fourier variable conjugate to the centre of mass.

use qbm::analytic::PhysicalParams;
use qbm::grid::SpatialGrid;
use qbm::master::{EvolutionConfig, Propagator};
use qbm::observables::{branch_coherence, Snapshot};
use qbm::state::{outer, CatState};

/// `∫ dk` of the characteristic-function solution at separation `u_end`
/// for a Gaussian of half-width `delta` initially at separation `offset`.
fn kernel(p: &PhysicalParams, delta: f64, u_end: f64, offset: f64, t: f64) -> f64 {
    let (g, d) = (p.gamma, 2.0 * p.mass * p.gamma * p.boltzmann * p.temperature / (p.hbar * p.hbar));
    let integrand = |k: f64| {
        let q = p.hbar * k / (2.0 * p.mass * g);
        let u0 = (u_end + q) * (-2.0 * g * t).exp() - q;
        let integ = (u0 + q).powi(2) * (4.0 * g * t).exp_m1() / (4.0 * g) - 2.0 * q * (u0 + q) * (2.0 * g * t).exp_m1() / (2.0 * g)
            + q * q * t;
        (-k * k * delta * delta / 2.0 - (u0 - offset).powi(2) / (8.0 * delta * delta) - d * integ).exp()
    };
    let (a, n) = (40.0, 16_000);
    let h = 2.0 * a / n as f64;
    (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * integrand(-a + i as f64 * h)
        })
        .sum::<f64>()
        * h
}

fn exact_coherence(p: &PhysicalParams, delta_x: f64, t: f64) -> f64 {
    kernel(p, 1.0, delta_x, delta_x, t) / kernel(p, 1.0, 0.0, 0.0, t)
}

#[test]
fn coherence_matches_quadrature() {
    let params = PhysicalParams::desk();
    let grid = SpatialGrid::new(256, 64.0).unwrap();
    for (delta_x, n_steps) in [(2.0, 1024), (4.0, 256), (8.0, 64)] {
        let config = EvolutionConfig {
            n_steps,
            sample_every: n_steps / 16,
            ..Default::default()
        };
        let cat = CatState::new(grid, delta_x, 1.0, 1.0).unwrap();
        let propagator = Propagator::new(grid, &params, &config).unwrap();
        let mut blocks = [outer(&cat.alpha, &cat.alpha), outer(&cat.alpha, &cat.beta), outer(&cat.beta, &cat.beta)];
        let mut worst = 0.0f64;
        propagator
            .run(&mut blocks, |t, b| {
                let c = branch_coherence(
                    &Snapshot::new(&b[0], &propagator, t),
                    &Snapshot::new(&b[1], &propagator, t),
                    &Snapshot::new(&b[2], &propagator, t),
                    delta_x,
                )?;
                worst = worst.max((c - exact_coherence(&params, delta_x, t)).abs());
                Ok(true)
            })
            .unwrap();
        println!("delta_x = {delta_x}: max deviation {worst:.3e}");
        assert!(worst < 1e-6, "delta_x = {delta_x}: {worst:e}");
    }
}

#[test]
fn quadrature_reduces_to_pure_decoherence_at_short_times() {
    let p = PhysicalParams::desk();
    let t = 1e-4;
    let c = exact_coherence(&p, 8.0, t);
    let d = 0.005;
    assert!((c - (-d * 64.0 * t).exp()).abs() < 1e-8);
}
