//! Physical sanity for the N-body workload: momentum conservation in free
//! space and mass conservation under merging.

use soa_apps::nbody::{NBody, NBodyConfig};

#[test]
fn momentum_is_conserved_over_a_long_free_space_run() {
    let mut nb = NBody::new(NBodyConfig {
        bodies: 512,
        bounds: None,
        workers: 2,
        ..NBodyConfig::default()
    })
    .unwrap();
    let (px0, py0) = nb.total_momentum();
    for _ in 0..50 {
        nb.step().unwrap();
    }
    let (px, py) = nb.total_momentum();
    // Pair forces cancel exactly in f32; only per-body accumulation
    // rounding remains, far below this tolerance.
    assert!((px - px0).abs() < 2e-3, "px drift {}", px - px0);
    assert!((py - py0).abs() < 2e-3, "py drift {}", py - py0);
    assert_eq!(nb.body_count(), 512);
}

#[test]
fn merging_preserves_mass_and_only_shrinks_the_population() {
    let mut nb = NBody::new(NBodyConfig {
        bodies: 128,
        merge_radius: 0.05,
        workers: 4,
        ..NBodyConfig::default()
    })
    .unwrap();
    let m0 = nb.total_mass();
    let mut prev = nb.body_count();
    for _ in 0..30 {
        nb.step().unwrap();
        let now = nb.body_count();
        assert!(now <= prev, "bodies only disappear by merging");
        assert!(now >= prev.div_ceil(2), "merges are pairwise");
        prev = now;
    }
    assert!(
        (nb.total_mass() - m0).abs() < 1e-3,
        "mass drifted {} -> {}",
        m0,
        nb.total_mass()
    );
    assert!(prev < 128, "a dense box with radius 0.05 merges someone in 30 steps");
    nb.heap().check_consistency();
}
