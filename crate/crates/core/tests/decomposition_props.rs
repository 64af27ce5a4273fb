use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trihybrid::channel::C64;
use trihybrid::decomposition::{decompose, phase_projection, DecomposeOptions};

fn random_fd(nt: usize, k: usize, seed: u64) -> DMatrix<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(nt, k, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factors_are_feasible_and_residual_is_monotone(
        seed in any::<u64>(),
        nt in 4usize..17,
        k in 1usize..4,
        extra in 0usize..4,
        pmax in 0.1f64..10.0,
    ) {
        let n_rf = (k + extra).min(nt);
        let fd = random_fd(nt, k, seed);
        let opts = DecomposeOptions { seed, ..DecomposeOptions::default() };
        let f = decompose(&fd, n_rf, pmax, &opts).unwrap();
        prop_assert_eq!(f.f_rf.shape(), (nt, n_rf));
        prop_assert_eq!(f.f_bb.shape(), (n_rf, k));
        let modulus = 1.0 / (nt as f64).sqrt();
        prop_assert!(f.f_rf.iter().all(|z| (z.norm() - modulus).abs() < 1e-12));
        prop_assert!(f.product().norm_squared() <= pmax * (1.0 + 1e-12));
        for w in f.history.windows(2) {
            prop_assert!(w[1] <= w[0], "residual rose from {} to {}", w[0], w[1]);
        }
        prop_assert!(((&fd - f.product()).norm() - f.residual).abs() < 1e-10 * (1.0 + f.residual));
    }

    #[test]
    fn decomposition_is_deterministic(seed in any::<u64>()) {
        let fd = random_fd(8, 2, seed);
        let opts = DecomposeOptions { seed, ..DecomposeOptions::default() };
        let a = decompose(&fd, 4, 1.0, &opts).unwrap();
        let b = decompose(&fd, 4, 1.0, &opts).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn phase_projection_is_idempotent(seed in any::<u64>(), r in 1usize..9, c in 1usize..5) {
        let m = random_fd(r, c, seed);
        let p = phase_projection(&m);
        for (z, w) in p.iter().zip(m.iter()) {
            prop_assert!((z.norm() - 1.0 / (r as f64).sqrt()).abs() < 1e-14);
            prop_assert!((z.arg() - w.arg()).abs() < 1e-12 || ((z.arg() - w.arg()).abs() - std::f64::consts::TAU).abs() < 1e-12);
        }
        prop_assert!((phase_projection(&p) - &p).norm() < 1e-13);
    }
}

#[test]
fn full_rf_chains_reproduce_the_precoder() {
    let fd = random_fd(6, 2, 5);
    let pmax = fd.norm_squared() * 2.0;
    let f = decompose(&fd, 6, pmax, &DecomposeOptions::default()).unwrap();
    assert!(f.residual < 1e-8 * fd.norm(), "residual {}", f.residual);
}

#[test]
fn rf_chain_count_is_checked() {
    let fd = random_fd(6, 3, 1);
    assert!(decompose(&fd, 2, 1.0, &DecomposeOptions::default()).is_err());
    assert!(decompose(&fd, 7, 1.0, &DecomposeOptions::default()).is_err());
    assert!(decompose(&fd, 3, 0.0, &DecomposeOptions::default()).is_err());
}
