//! Regression against a stored trajectory. Regenerate with
//! `qbm evolve --preset desk --config tests/golden/evolve_small.conf --out <dir>`
//! and copy `trajectory.csv` over `tests/golden/evolve_small.csv`.

use std::fs;
use std::path::Path;
use std::process::Command;

const TOLERANCE: f64 = 1e-12;

#[test]
fn small_evolution_matches_golden_file() {
    let golden_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let out = tempfile::TempDir::new().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_qbm"))
        .args(["evolve", "--preset", "desk", "--config"])
        .arg(golden_dir.join("evolve_small.conf"))
        .arg("--out")
        .arg(out.path())
        .status()
        .unwrap();
    assert!(status.success());
    let fresh = fs::read_to_string(out.path().join("trajectory.csv")).unwrap();
    let golden = fs::read_to_string(golden_dir.join("evolve_small.csv")).unwrap();
    let (fresh, golden): (Vec<&str>, Vec<&str>) = (fresh.lines().collect(), golden.lines().collect());
    assert_eq!(fresh.len(), golden.len());
    for (a, b) in fresh.iter().zip(&golden) {
        if a.starts_with('#') || a.starts_with("time_s") {
            assert_eq!(a, b);
            continue;
        }
        for (x, y) in a.split(',').zip(b.split(',')) {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() <= TOLERANCE, "{x} vs {y}");
        }
    }
}
