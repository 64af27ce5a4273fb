//! Factorization of a fully digital precoder into phase-shifter and
//! baseband parts, `F_D ≈ F_RF F_BB` with `|F_RF(i, j)|^2 = 1 / N_T`.
//!
//! Alternating minimization of `||F_D - F_RF F_BB||_F^2`: the baseband step is
//! an exact least-squares solve; the analog step takes the phases of
//! `F_D F_BB^H`. That phase step is not a minimizer in general, so when it
//! would raise the residual the analog update falls back to one exact
//! entrywise sweep, which cannot.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::C64;
use crate::error::{Error, Result};
use crate::wmmse::sum_rate;


#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeOptions {
    pub max_iterations: usize,
    /// Relative residual change that ends the iteration.
    pub tolerance: f64,
    /// Seed for the extra analog columns beyond the first `K`.
    pub seed: u64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridFactors {
    /// `N_T x N_RF`, every entry of modulus `1 / sqrt(N_T)`.
    pub f_rf: DMatrix<C64>,
    /// `N_RF x K`.
    pub f_bb: DMatrix<C64>,
    /// `||F_D - F_RF F_BB||_F` of the returned factors.
    pub residual: f64,
    /// Residual after every baseband solve, before the final rescaling.
    pub history: Vec<f64>,
}

impl HybridFactors {
    pub fn product(&self) -> DMatrix<C64> {
        &self.f_rf * &self.f_bb
    }
}

/// Entrywise `exp(j arg M(i, j)) / sqrt(N_T)` with `N_T = rows(M)`; zero
/// entries take phase 0.
pub fn phase_projection(m: &DMatrix<C64>) -> DMatrix<C64> {
    let scale = 1.0 / (m.nrows() as f64).sqrt();
    m.map(|z| {
        if z.norm() == 0.0 {
            C64::from(scale)
        } else {
            C64::from_polar(scale, z.arg())
        }
    })
}

fn least_squares(f_rf: &DMatrix<C64>, fd: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let svd = f_rf.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    svd.solve(fd, eps)
        .map_err(|e| Error::Internal(format!("least-squares solve failed: {e}")))
}

fn residual(fd: &DMatrix<C64>, f_rf: &DMatrix<C64>, f_bb: &DMatrix<C64>) -> f64 {
    (fd - f_rf * f_bb).norm()
}

/// One Gauss-Seidel pass over the analog entries, each set to its exact
/// minimizer with the others fixed.
fn entrywise_sweep(fd: &DMatrix<C64>, f_rf: &mut DMatrix<C64>, f_bb: &DMatrix<C64>) {
    let scale = 1.0 / (f_rf.nrows() as f64).sqrt();
    for i in 0..f_rf.nrows() {
        let mut row = fd.row(i) - f_rf.row(i) * f_bb;
        for j in 0..f_rf.ncols() {
            let b = f_bb.row(j);
            // row holds the residual with entry j included; remove it
            row += b * f_rf[(i, j)];
            let z: C64 = row.iter().zip(b.iter()).map(|(e, x)| e * x.conj()).sum();
            if z.norm() > 0.0 {
                f_rf[(i, j)] = C64::from_polar(scale, z.arg());
            }
            row -= b * f_rf[(i, j)];
        }
    }
}

/// Alternating decomposition with `K <= N_RF <= N_T`. `F_BB` is finally
/// scaled by `min(1, sqrt(P_max / ||F_RF F_BB||_F^2))`.
pub fn decompose(
    fd: &DMatrix<C64>,
    n_rf: usize,
    max_power: f64,
    options: &DecomposeOptions,
) -> Result<HybridFactors> {
    let (nt, users) = fd.shape();
    if n_rf < users {
        return Err(Error::Config(format!(
            "n_rf = {n_rf} is below the number of users {users}"
        )));
    }
    if n_rf > nt {
        return Err(Error::Config(format!(
            "n_rf = {n_rf} exceeds the number of antennas {nt}"
        )));
    }
    if !(max_power > 0.0) {
        return Err(Error::Domain("power budget must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut init = DMatrix::<C64>::zeros(nt, n_rf);
    init.columns_mut(0, users).copy_from(fd);
    for j in users..n_rf {
        for i in 0..nt {
            init[(i, j)] = C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI));
        }
    }
    let mut f_rf = phase_projection(&init);
    let mut f_bb = least_squares(&f_rf, fd)?;
    let mut current = residual(fd, &f_rf, &f_bb);
    let mut history = vec![current];

    for _ in 0..options.max_iterations {
        let mut next_rf = phase_projection(&(fd * f_bb.adjoint()));
        if residual(fd, &next_rf, &f_bb) > current {
            next_rf = f_rf.clone();
            entrywise_sweep(fd, &mut next_rf, &f_bb);
        }
        let next_bb = least_squares(&next_rf, fd)?;
        let next = residual(fd, &next_rf, &next_bb);
        if next > current {
            // rounding-level increase near a fixed point
            break;
        }
        let change = (current - next) / current.max(f64::MIN_POSITIVE);
        f_rf = next_rf;
        f_bb = next_bb;
        current = next;
        history.push(current);
        if change < options.tolerance || current == 0.0 {
            break;
        }
    }

    let power = (&f_rf * &f_bb).norm_squared();
    if power > max_power {
        f_bb *= C64::from((max_power / power).sqrt());
    }
    let residual = residual(fd, &f_rf, &f_bb);
    Ok(HybridFactors {
        f_rf,
        f_bb,
        residual,
        history,
    })
}

/// Sum rate with `F_D` minus sum rate with `F_RF F_BB`.
pub fn sum_rate_loss(
    fd: &DMatrix<C64>,
    factors: &HybridFactors,
    channels: &[DVector<C64>],
    weights: &[f64],
    noise: &[f64],
) -> Result<f64> {
    Ok(sum_rate(channels, fd, weights, noise)? - sum_rate(channels, &factors.product(), weights, noise)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_fd(nt: usize, k: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(nt, k, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn phase_projection_examples() {
        let m = DMatrix::from_element(4, 2, C64::from(3.0));
        let p = phase_projection(&m);
        assert!(p.iter().all(|z| (z - C64::from(0.5)).norm() < 1e-15));
        let r = phase_projection(&random_fd(4, 3, 1));
        assert!(r.iter().all(|z| (z.norm_sqr() - 0.25).abs() < 1e-15));
        let again = phase_projection(&r);
        assert!((again - &r).norm() < 1e-14);
        let zero = phase_projection(&DMatrix::zeros(9, 1));
        assert!(zero.iter().all(|z| *z == C64::from(1.0 / 3.0)));
    }

    #[test]
    fn exact_representable_case() {
        let phases = random_fd(9, 2, 2);
        let fd = phase_projection(&phases);
        let f = decompose(&fd, 4, 10.0, &DecomposeOptions::default()).unwrap();
        assert!(f.residual <= 1e-9);
    }

    #[test]
    fn full_rank_is_exact() {
        for seed in 0..5 {
            let fd = random_fd(9, 2, seed + 10) * C64::from(0.01);
            let f = decompose(&fd, 9, 1.0, &DecomposeOptions::default()).unwrap();
            assert!(f.residual <= 1e-6 * fd.norm().max(1.0), "{}", f.residual);
        }
    }

    #[test]
    fn monotone_and_feasible() {
        for seed in 0..10 {
            let fd = random_fd(9, 2, seed);
            let pmax = 0.5 * fd.norm_squared();
            let f = decompose(&fd, 3, pmax, &DecomposeOptions { seed, ..Default::default() }).unwrap();
            for w in f.history.windows(2) {
                assert!(w[1] <= w[0]);
            }
            assert!(f.f_rf.iter().all(|z| (z.norm_sqr() - 1.0 / 9.0).abs() < 1e-12));
            assert!(f.product().norm_squared() <= pmax + 1e-8);
        }
    }

    #[test]
    fn rejects_small_rf_chain_count() {
        let fd = random_fd(9, 3, 0);
        assert!(matches!(
            decompose(&fd, 2, 1.0, &DecomposeOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn exact_factorization_has_no_loss() {
        let fd = phase_projection(&random_fd(4, 2, 3)) * C64::from(0.3);
        let f = decompose(&fd, 2, 10.0, &DecomposeOptions::default()).unwrap();
        let h = vec![
            DVector::from_fn(4, |i, _| C64::new(i as f64, 1.0)),
            DVector::from_fn(4, |i, _| C64::new(1.0, -(i as f64))),
        ];
        let loss = sum_rate_loss(&fd, &f, &h, &[1.0, 1.0], &[0.1, 0.1]).unwrap();
        assert!(loss.abs() < 1e-9);
    }
}
