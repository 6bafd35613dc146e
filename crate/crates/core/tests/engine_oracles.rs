mod common;

use gbscm::antenna::{ArrayDescriptor, ArrayPattern, ElementPattern, PolarizedPattern};
use gbscm::engine::{channel_baseline, channel_grid, channel_optimized, precompute_spatial};
use gbscm::geometry::{Angles, LinkMultipath, Subpath, Vec3};
use gbscm::linalg::C64;
use gbscm::polarized::{polarized_baseline, polarized_channel, polarized_grid, precompute_polarized};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

#[test]
fn scalar_engines_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for seed in 0..12u64 {
        let link = random_link(seed, 20, false);
        let s = if seed % 2 == 0 { 8 } else { 64 };
        let tx = ula(s, link.f0, Vec3::Y, ArrayPattern::Scalar(sector()));
        let rx = ula(4, link.f0, Vec3::X, ArrayPattern::Scalar(ElementPattern::Isotropic));
        let sp = precompute_spatial(&link, &tx, &rx).unwrap();
        for _ in 0..3 {
            let f = link.f0 + rng.random_range(-10e6..10e6);
            let t = rng.random_range(0.0..2.0);
            let oracle = oracle_channel(&link, &tx, &rx, f, t);
            assert!(rel_diff(&channel_baseline(&link, &tx, &rx, f, t).unwrap(), &oracle) <= 1e-12);
            assert!(rel_diff(&channel_optimized(&sp, f, t), &oracle) <= 1e-12);
        }
    }
}

#[test]
fn grid_matches_brute_force() {
    let link = random_link(3, 5, false);
    let tx = ula(6, link.f0, Vec3::Y, ArrayPattern::Scalar(sector()));
    let rx = ula(3, link.f0, Vec3::Y, ArrayPattern::Scalar(sector()));
    let sp = precompute_spatial(&link, &tx, &rx).unwrap();
    let freqs: Vec<f64> = (0..37).map(|k| link.f0 + (k as f64 - 18.0) * 15e3).collect();
    let times = [0.0, 0.25, 1.5];
    let grid = channel_grid(&sp, &freqs, &times).unwrap();
    for (i, t) in times.iter().enumerate() {
        for (k, f) in freqs.iter().enumerate() {
            assert!(rel_diff(&grid.get(i, k), &oracle_channel(&link, &tx, &rx, *f, *t)) <= 1e-12);
        }
    }
}

#[test]
fn single_subpath_single_antenna_closed_form() {
    let f0 = 3e9;
    let sp = Subpath::new(0.25, 1e-7, Angles::new(1.0, 0.5), Angles::new(2.0, -1.0), 0.3, 0).unwrap();
    let link = LinkMultipath::new(vec![sp], f0, Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)).unwrap();
    let one = ArrayDescriptor::single_isotropic();
    let t = 0.01;
    let nu = unit(Angles::new(1.0, 0.5))[0];
    let k0 = std::f64::consts::TAU * f0 / C;
    let expected = C64::from_polar(0.5, 0.3 + k0 * nu * t - std::f64::consts::TAU * f0 * 1e-7);
    let h = channel_baseline(&link, &one, &one, f0, t).unwrap();
    assert!((h[(0, 0)] - expected).norm() < 1e-12);
    let o = channel_optimized(&precompute_spatial(&link, &one, &one).unwrap(), f0, t);
    assert!((o[(0, 0)] - expected).norm() < 1e-12);
}

#[test]
fn polarized_engines_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..6u64 {
        let link = random_link(seed + 50, 10, true);
        let slant = |deg: f64| ArrayPattern::Polarized(PolarizedPattern::slanted(sector(), deg.to_radians()).unwrap());
        let tx = ula(4, link.f0, Vec3::Y, slant(45.0));
        let rx = ula(2, link.f0, Vec3::Y, slant(10.0 * seed as f64));
        let psp = precompute_polarized(&link, &tx, &rx).unwrap();
        let f = link.f0 + rng.random_range(-5e6..5e6);
        let t = rng.random_range(0.0..1.0);
        let oracle = oracle_polarized_channel(&link, &tx, &rx, f, t);
        assert!(rel_diff(&polarized_channel(&psp, f, t), &oracle) <= 1e-12);
        assert!(rel_diff(&polarized_baseline(&link, &tx, &rx, f, t).unwrap(), &oracle) <= 1e-12);
        let grid = polarized_grid(&psp, &[f, f + 15e3], &[t]).unwrap();
        assert!(rel_diff(&grid[0].sum(), &oracle) <= 1e-12);
    }
}

fn arb_angles() -> impl Strategy<Value = Angles> {
    (0.0..std::f64::consts::PI, -std::f64::consts::PI..std::f64::consts::PI).prop_map(|(t, p)| Angles::new(t, p))
}

fn arb_subpath() -> impl Strategy<Value = Subpath> {
    (0.0..2.0f64, 0.0..2e-6f64, arb_angles(), arb_angles(), 0.0..std::f64::consts::TAU)
        .prop_map(|(p, d, a, b, ph)| Subpath::new(p, d, a, b, ph, 0).unwrap())
}

fn arb_position() -> impl Strategy<Value = Vec3> {
    (-0.3..0.3f64, -0.3..0.3f64, -0.3..0.3f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn factored_product_equals_subpath_sum(
        subpaths in prop::collection::vec(arb_subpath(), 1..12),
        tx_pos in prop::collection::vec(arb_position(), 1..5),
        rx_pos in prop::collection::vec(arb_position(), 1..4),
        v in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64),
        f in 1e8..6e9f64,
        t in 0.0..5.0f64,
    ) {
        let link = LinkMultipath::new(subpaths, 2.4e9, Vec3::new(v.0, 0.0, 0.0), Vec3::new(v.1, v.2, 0.0)).unwrap();
        let tx = ArrayDescriptor::new(tx_pos, ArrayPattern::Scalar(sector())).unwrap();
        let rx = ArrayDescriptor::new(rx_pos, ArrayPattern::Scalar(ElementPattern::Isotropic)).unwrap();
        let oracle = oracle_channel(&link, &tx, &rx, f, t);
        prop_assume!(oracle.max_abs() > 1e-6);
        let sp = precompute_spatial(&link, &tx, &rx).unwrap();
        prop_assert!(rel_diff(&channel_optimized(&sp, f, t), &oracle) <= 1e-10);
    }
}
