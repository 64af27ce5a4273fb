use std::f64::consts::PI;

use nalgebra::{DVector, Vector3};
use proptest::prelude::*;

use trihybrid::channel::{
    dbm_to_watts, direct_channel_oracle, effective_channel, em_user_channel, far_field_arv, generate_scenario,
    make_path, near_field_arv, watts_to_dbm, FieldMode, ScenarioConfig, UpaGeometry, C64,
};
use trihybrid::harmonics::{truncation_length, PatternCoefficients};
use trihybrid::wmmse::random_patterns;

fn geometry(h: usize, v: usize) -> UpaGeometry {
    UpaGeometry::half_wavelength(h, v, 30e9).unwrap()
}

/// Response built from the element coordinates and a plane wave toward `(theta, phi)`.
fn plane_wave_oracle(geom: &UpaGeometry, theta: f64, phi: f64) -> DVector<C64> {
    let u = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
    let k = 2.0 * PI / geom.wavelength;
    let pos = geom.element_positions();
    let scale = 1.0 / (pos.len() as f64).sqrt();
    DVector::from_iterator(pos.len(), pos.iter().map(|p| C64::from_polar(scale, -k * p.dot(&u))))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn far_field_response_is_unit_norm(theta in 0.0f64..PI, phi in -PI..PI, h in 1usize..5, v in 1usize..5) {
        let a = far_field_arv(theta, phi, &geometry(h, v));
        prop_assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn far_field_matches_plane_wave(theta in 0.0f64..PI, phi in -PI..PI, h in 1usize..5, v in 1usize..5) {
        let g = geometry(h, v);
        let a = far_field_arv(theta, phi, &g);
        let b = plane_wave_oracle(&g, theta, phi);
        prop_assert!((a - b).norm() < 1e-10);
    }

    #[test]
    fn near_field_tends_to_far_field(theta in 0.2f64..2.9, phi in -PI..PI) {
        let g = geometry(3, 3);
        let r = 1e6;
        let src = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()) * r;
        let path = make_path(&g, FieldMode::Near, &Vector3::zeros(), &src, 0.0, C64::new(1.0, 0.0)).unwrap();
        let near = near_field_arv(&path, g.wavelength).unwrap();
        prop_assert!((near.norm() - 1.0).abs() < 1e-12);
        let far = far_field_arv(theta, phi, &g);
        prop_assert!((near - far).norm() < 1e-4);
    }

    #[test]
    fn factorization_matches_direct_model(seed in 0u64..10_000, near in any::<bool>(), degree in 1usize..5) {
        let cfg = ScenarioConfig {
            field_mode: if near { FieldMode::Near } else { FieldMode::Far },
            user_radius: if near { 5.0 } else { 200.0 },
            ..ScenarioConfig::default()
        };
        let sc = generate_scenario(&cfg, seed).unwrap();
        let patterns = random_patterns(sc.num_antennas(), truncation_length(degree), 0.7, seed);
        for paths in &sc.paths {
            let em = em_user_channel(paths, &sc.geometry, degree).unwrap();
            let h = effective_channel(&patterns, &em).unwrap();
            let oracle = direct_channel_oracle(paths, &sc.geometry, &patterns).unwrap();
            prop_assert!((&h - &oracle).norm() <= 1e-10 * oracle.norm().max(1e-300));
        }
    }

    #[test]
    fn effective_channel_is_linear_in_patterns(seed in 0u64..10_000, s in -2.0f64..2.0) {
        let sc = generate_scenario(&ScenarioConfig::default(), seed).unwrap();
        let em = em_user_channel(&sc.paths[0], &sc.geometry, 4).unwrap();
        let p1 = random_patterns(9, 25, 0.5, seed);
        let p2 = random_patterns(9, 25, 0.5, seed + 1);
        let mix: Vec<PatternCoefficients> = p1
            .iter()
            .zip(&p2)
            .map(|(a, b)| PatternCoefficients::new(a.as_vector() + b.as_vector() * s).unwrap())
            .collect();
        let lhs = effective_channel(&mix, &em).unwrap();
        let rhs = effective_channel(&p1, &em).unwrap() + effective_channel(&p2, &em).unwrap() * C64::from(s);
        prop_assert!((&lhs - &rhs).norm() <= 1e-10 * lhs.norm().max(1e-300));
    }

    #[test]
    fn scenarios_are_pure_functions_of_seed(seed in 0u64..10_000) {
        let cfg = ScenarioConfig::default();
        let a = generate_scenario(&cfg, seed).unwrap();
        let b = generate_scenario(&cfg, seed).unwrap();
        prop_assert_eq!(a.user_positions, b.user_positions);
        prop_assert_eq!(a.paths, b.paths);
    }

    #[test]
    fn dbm_roundtrip(dbm in -120.0f64..60.0) {
        prop_assert!((watts_to_dbm(dbm_to_watts(dbm)) - dbm).abs() < 1e-9);
    }
}

#[test]
fn element_order_is_horizontal_major() {
    let g = geometry(3, 2);
    let pos = g.element_positions();
    let d = g.spacing;
    assert_eq!(pos.len(), 6);
    for (n, p) in pos.iter().enumerate() {
        let (ih, iv) = ((n / 2) as f64, (n % 2) as f64);
        assert!((p - Vector3::new(0.0, ih * d, iv * d)).norm() < 1e-15);
    }
}

#[test]
fn isotropic_patterns_reduce_to_array_response() {
    let sc = generate_scenario(&ScenarioConfig::default(), 7).unwrap();
    let iso = vec![PatternCoefficients::isotropic(4); sc.num_antennas()];
    let em = em_user_channel(&sc.paths[0], &sc.geometry, 4).unwrap();
    let h = effective_channel(&iso, &em).unwrap();
    let ones = vec![OnePattern; sc.num_antennas()];
    let direct = direct_channel_oracle(&sc.paths[0], &sc.geometry, &ones).unwrap();
    assert!((&h - &direct).norm() <= 1e-12 * direct.norm());
}

#[derive(Clone)]
struct OnePattern;

impl trihybrid::channel::GainPattern for OnePattern {
    fn gain(&self, _theta: f64, _phi: f64) -> f64 {
        1.0
    }
}

#[test]
fn invalid_scenarios_are_rejected() {
    let bad = [
        ScenarioConfig { users: 0, ..ScenarioConfig::default() },
        ScenarioConfig { paths: 0, ..ScenarioConfig::default() },
        ScenarioConfig { frequency_hz: -1.0, ..ScenarioConfig::default() },
        ScenarioConfig { weights: vec![1.0], ..ScenarioConfig::default() },
        ScenarioConfig { max_power: 0.0, ..ScenarioConfig::default() },
    ];
    for cfg in bad {
        assert!(generate_scenario(&cfg, 1).is_err());
    }
    let iso = vec![PatternCoefficients::isotropic(4); 8];
    let sc = generate_scenario(&ScenarioConfig::default(), 1).unwrap();
    let em = em_user_channel(&sc.paths[0], &sc.geometry, 4).unwrap();
    assert!(effective_channel(&iso, &em).is_err());
}
