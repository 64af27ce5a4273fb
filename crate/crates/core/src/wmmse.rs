//! Alternating WMMSE solver for tri-hybrid weighted sum-rate maximization.
//!
//! The weighted sum rate `sum_k beta_k log2(1 + SINR_k)` is maximized through
//! the equivalent minimization of `sum_k beta_k (w_k e_k - ln w_k)` over the
//! fictitious combiners `v`, MSE weights `w`, a fully digital precoder
//! `F_D = F_RF F_BB` and the per-antenna harmonic coefficients. Each outer
//! iteration runs four closed-form block updates:
//!
//! 1. `v_k = (h_k^T f_k)^* / (sum_i |h_k^T f_i|^2 + sigma_k^2)`;
//! 2. `w_k = 1 / (1 - v_k h_k^T f_k)`;
//! 3. `f_k = (sum_j beta_j w_j |v_j|^2 h_j^* h_j^T + lambda I)^{-1} beta_k w_k v_k^* h_k^*`
//!    with one multiplier `lambda >= 0` set by bisection on the power budget;
//! 4. for every antenna in ascending order, the AC coefficients minimize a
//!    quadratic on the sphere `||c_AC||^2 = 4 pi - eta^2`. Two stationary
//!    points are computed by bisection on the multiplier and the better one
//!    replaces the incumbent only if it strictly lowers the exact objective.
//!
//! Here `h_k = F_EM^T h_k^EM` is the effective channel of user `k`.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{block_gain, effective_channel, EmChannel, Scenario, C64};
use crate::error::{Error, Result};
use crate::harmonics::{PatternCoefficients, FOUR_PI};

/// Weights, noise powers and power budget of the downlink.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget {
    /// `beta_k`.
    pub weights: Vec<f64>,
    /// `sigma_k^2` in watts.
    pub noise: Vec<f64>,
    /// `P_max` in watts.
    pub max_power: f64,
}

impl LinkBudget {
    pub fn validate(&self, users: usize) -> Result<()> {
        if self.weights.len() != users || self.noise.len() != users {
            return Err(Error::Shape(format!(
                "{} weights and {} noise powers for {users} users",
                self.weights.len(),
                self.noise.len()
            )));
        }
        if self.noise.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Domain("noise powers must be positive".into()));
        }
        if self.weights.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::Domain("user weights must be positive".into()));
        }
        if !(self.max_power > 0.0 && self.max_power.is_finite()) {
            return Err(Error::Domain("power budget must be positive".into()));
        }
        Ok(())
    }
}

/// EM-domain channels of all users plus the link budget.
#[derive(Debug, Clone)]
pub struct Problem {
    pub em_channels: Vec<EmChannel>,
    pub budget: LinkBudget,
}

impl Problem {
    pub fn new(em_channels: Vec<EmChannel>, budget: LinkBudget) -> Result<Self> {
        if em_channels.is_empty() {
            return Err(Error::Domain("at least one user is required".into()));
        }
        let (nt, t) = (em_channels[0].num_antennas(), em_channels[0].block_len());
        if em_channels.iter().any(|h| h.num_antennas() != nt || h.block_len() != t) {
            return Err(Error::Shape("EM channels of different users disagree in shape".into()));
        }
        if t < 2 {
            return Err(Error::Shape("at least one AC harmonic is required".into()));
        }
        budget.validate(em_channels.len())?;
        Ok(Self { em_channels, budget })
    }

    pub fn from_scenario(scenario: &Scenario, degree: usize) -> Result<Self> {
        Self::new(
            scenario.em_channels(degree)?,
            LinkBudget {
                weights: scenario.weights.clone(),
                noise: scenario.noise_powers.clone(),
                max_power: scenario.max_power,
            },
        )
    }

    pub fn num_users(&self) -> usize {
        self.em_channels.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.em_channels[0].num_antennas()
    }

    pub fn harmonics(&self) -> usize {
        self.em_channels[0].block_len()
    }

    pub fn effective_channels(&self, patterns: &[PatternCoefficients]) -> Result<Vec<DVector<C64>>> {
        self.em_channels
            .iter()
            .map(|h| effective_channel(patterns, h))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Pinned DC coefficient `eta`, `0 < eta < sqrt(4 pi)`.
    pub eta: f64,
    pub max_iterations: usize,
    /// Stop when the relative sum-rate change drops below this.
    pub tolerance: f64,
    /// Relative residual for the multiplier bisections.
    pub bisection_tolerance: f64,
    /// Hybrid baseline: keep the patterns fixed (isotropic by default).
    pub freeze_em: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: (2.0 * PI).sqrt(),
            max_iterations: 100,
            tolerance: 1e-5,
            bisection_tolerance: 1e-10,
            freeze_em: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < FOUR_PI.sqrt()) {
            return Err(Error::Config(format!("eta {} must lie in (0, sqrt(4 pi))", self.eta)));
        }
        if !(self.tolerance >= 0.0) || !(self.bisection_tolerance > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }

    /// Squared AC radius `4 pi - eta^2`.
    pub fn ac_radius2(&self) -> f64 {
        FOUR_PI - self.eta * self.eta
    }
}

/// Iterate of the alternating solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub w: Vec<f64>,
    pub v: Vec<C64>,
    /// `N_T x K` fully digital precoder.
    pub fd: DMatrix<C64>,
    /// `c^(n)` for every antenna; the columns of `F_EM`.
    pub patterns: Vec<PatternCoefficients>,
}

/// `G[k, i] = h_k^T f_{D,i}`.
pub fn link_gains(channels: &[DVector<C64>], fd: &DMatrix<C64>) -> DMatrix<C64> {
    let k = channels.len();
    DMatrix::from_fn(k, fd.ncols(), |row, col| {
        channels[row]
            .iter()
            .zip(fd.column(col).iter())
            .map(|(h, f)| h * f)
            .sum()
    })
}

fn check_shapes(channels: &[DVector<C64>], fd: &DMatrix<C64>) -> Result<()> {
    if channels.len() != fd.ncols() {
        return Err(Error::Shape(format!(
            "{} channels for a precoder with {} streams",
            channels.len(),
            fd.ncols()
        )));
    }
    if channels.iter().any(|h| h.len() != fd.nrows()) {
        return Err(Error::Shape("channel length differs from precoder rows".into()));
    }
    Ok(())
}

/// `sum_k beta_k log2(1 + |h_k^T f_k|^2 / (sigma_k^2 + sum_{i != k} |h_k^T f_i|^2))`.
pub fn sum_rate(
    channels: &[DVector<C64>],
    fd: &DMatrix<C64>,
    weights: &[f64],
    noise: &[f64],
) -> Result<f64> {
    check_shapes(channels, fd)?;
    if noise.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Domain("noise powers must be positive".into()));
    }
    let g = link_gains(channels, fd);
    Ok((0..channels.len())
        .map(|k| {
            let desired = g[(k, k)].norm_sqr();
            let interference: f64 = (0..fd.ncols())
                .filter(|&i| i != k)
                .map(|i| g[(k, i)].norm_sqr())
                .sum();
            weights[k] * (1.0 + desired / (noise[k] + interference)).log2()
        })
        .sum())
}

fn mse_from_gains(k: usize, v: C64, g: &DMatrix<C64>, noise: f64) -> f64 {
    let v2 = v.norm_sqr();
    let mut e = (C64::from(1.0) - v * g[(k, k)]).norm_sqr() + noise * v2;
    for i in 0..g.ncols() {
        if i != k {
            e += v2 * g[(k, i)].norm_sqr();
        }
    }
    e
}

/// `e_k = |1 - v_k h_k^T f_k|^2 + |v_k|^2 sum_{i != k} |h_k^T f_i|^2 + sigma_k^2 |v_k|^2`.
pub fn mse_e_k(k: usize, v_k: C64, channels: &[DVector<C64>], fd: &DMatrix<C64>, noise_k: f64) -> f64 {
    mse_from_gains(k, v_k, &link_gains(channels, fd), noise_k)
}

fn objective_from_gains(g: &DMatrix<C64>, v: &[C64], w: &[f64], budget: &LinkBudget) -> f64 {
    (0..v.len())
        .map(|k| budget.weights[k] * (w[k] * mse_from_gains(k, v[k], g, budget.noise[k]) - w[k].ln()))
        .sum()
}

/// `sum_k beta_k (w_k e_k - ln w_k)`.
pub fn wmmse_objective(
    channels: &[DVector<C64>],
    fd: &DMatrix<C64>,
    v: &[C64],
    w: &[f64],
    budget: &LinkBudget,
) -> f64 {
    objective_from_gains(&link_gains(channels, fd), v, w, budget)
}

/// Step 1: MMSE combiners.
pub fn update_v(channels: &[DVector<C64>], fd: &DMatrix<C64>, noise: &[f64]) -> Vec<C64> {
    let g = link_gains(channels, fd);
    (0..channels.len())
        .map(|k| {
            let total: f64 = (0..fd.ncols()).map(|i| g[(k, i)].norm_sqr()).sum();
            g[(k, k)].conj() / (total + noise[k])
        })
        .collect()
}

/// Step 2: `w_k = 1 / (1 - v_k h_k^T f_k)`, which equals `1 / e_k` when `v`
/// comes straight from [`update_v`].
pub fn update_w(
    channels: &[DVector<C64>],
    fd: &DMatrix<C64>,
    v: &[C64],
    noise: &[f64],
) -> Result<Vec<f64>> {
    let g = link_gains(channels, fd);
    (0..channels.len())
        .map(|k| {
            let residual = C64::from(1.0) - v[k] * g[(k, k)];
            let e = mse_from_gains(k, v[k], &g, noise[k]);
            if e <= 0.0 || residual.norm() < 1e-14 || residual.re <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "MSE of user {k} is {e:e}; weight update undefined"
                )));
            }
            Ok(1.0 / residual.re)
        })
        .collect()
}

/// Output of the power-constrained precoder update.
#[derive(Debug, Clone)]
pub struct PrecoderUpdate {
    pub fd: DMatrix<C64>,
    /// Shared power multiplier `lambda`.
    pub multiplier: f64,
}

/// Step 3: fully digital precoder with one shared multiplier chosen so the
/// budget holds with complementary slackness.
pub fn update_fd(
    channels: &[DVector<C64>],
    v: &[C64],
    w: &[f64],
    budget: &LinkBudget,
    tolerance: f64,
) -> Result<PrecoderUpdate> {
    let users = channels.len();
    let nt = channels[0].len();
    let mut m = DMatrix::<C64>::zeros(nt, nt);
    let mut rhs = DMatrix::<C64>::zeros(nt, users);
    for j in 0..users {
        let gamma = budget.weights[j] * w[j] * v[j].norm_sqr();
        let hc = channels[j].map(|z| z.conj());
        m += (&hc * channels[j].transpose()) * C64::from(gamma);
        rhs.set_column(j, &(hc * (v[j].conj() * budget.weights[j] * w[j])));
    }
    // exact Hermitian symmetry before the eigendecomposition
    let m = (&m + m.adjoint()) * C64::from(0.5);
    let eig = SymmetricEigen::new(m);
    let lam = eig.eigenvalues;
    let u = eig.eigenvectors;
    let q = u.adjoint() * &rhs;
    let lam_max = lam.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let floor = 1e-12 * lam_max;
    let row_energy: Vec<f64> = (0..nt).map(|i| q.row(i).iter().map(|z| z.norm_sqr()).sum()).collect();

    let power = |mu: f64| -> f64 {
        (0..nt)
            .map(|i| {
                let denom = lam[i] + mu;
                if mu == 0.0 && lam[i] <= floor {
                    0.0
                } else {
                    row_energy[i] / (denom * denom)
                }
            })
            .sum()
    };
    let build = |mu: f64| -> DMatrix<C64> {
        let mut scaled = q.clone();
        for i in 0..nt {
            let s = if mu == 0.0 && lam[i] <= floor {
                0.0
            } else {
                1.0 / (lam[i] + mu)
            };
            scaled.row_mut(i).scale_mut(s);
        }
        &u * scaled
    };

    let pmax = budget.max_power;
    if power(0.0) <= pmax {
        return Ok(PrecoderUpdate {
            fd: build(0.0),
            multiplier: 0.0,
        });
    }
    let mut hi = rhs.norm() / pmax.sqrt();
    let mut guard = 0;
    while power(hi) > pmax {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 || !hi.is_finite() {
            return Err(Error::Internal("power multiplier bracket not found".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = power(mid);
        if p > pmax {
            lo = mid;
        } else {
            hi = mid;
        }
        if (p - pmax).abs() <= tolerance * pmax && p <= pmax {
            break;
        }
    }
    let p = power(hi);
    if p > pmax * (1.0 + 1e-12) {
        return Err(Error::Internal(format!(
            "power bisection ended infeasible: {p:e} > {pmax:e}"
        )));
    }
    Ok(PrecoderUpdate {
        fd: build(hi),
        multiplier: hi,
    })
}

/// `g_{k,i}(c_AC) = a^T c_AC + b` for antenna `n`: the link gain
/// `h_k^T f_{D,i}` as an affine function of antenna `n`'s AC coefficients.
pub fn g_affine(
    k: usize,
    i: usize,
    n: usize,
    fd: &DMatrix<C64>,
    patterns: &[PatternCoefficients],
    em: &[EmChannel],
) -> (DVector<C64>, C64) {
    let h = &em[k];
    let f = fd.column(i);
    let a = h.ac(n).map(|z| z * f[n]);
    let mut b = C64::from(0.0);
    for m in 0..h.num_antennas() {
        b += h.dc(m) * patterns[m].dc() * f[m];
        if m != n {
            let ac: C64 = h
                .ac(m)
                .iter()
                .zip(patterns[m].as_vector().iter().skip(1))
                .map(|(z, c)| z * *c)
                .sum();
            b += ac * f[m];
        }
    }
    (a, b)
}

/// `min ½ cᵀ A c + dᵀ c` subject to `||c||^2 = rho2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSubproblem {
    pub a: DMatrix<f64>,
    pub d: DVector<f64>,
    pub rho2: f64,
    /// Objective terms independent of `c`.
    pub constant: f64,
}

impl QuadraticSubproblem {
    /// `½ cᵀ A c + dᵀ c + constant`.
    pub fn value(&self, c: &DVector<f64>) -> f64 {
        0.5 * c.dot(&(&self.a * c)) + self.d.dot(c) + self.constant
    }

    /// Gradient of the Lagrangian `½cᵀAc + dᵀc + nu (cᵀc - rho2)`.
    pub fn lagrangian_gradient(&self, c: &DVector<f64>, nu: f64) -> DVector<f64> {
        &self.a * c + &self.d + c * (2.0 * nu)
    }

    /// `||(A + 2 nu I)^{-1} d||^2`.
    pub fn solution_norm2(&self, nu: f64) -> f64 {
        let eig = SymmetricEigen::new(self.a.clone());
        let dt = eig.eigenvectors.transpose() * &self.d;
        eig.eigenvalues
            .iter()
            .zip(dt.iter())
            .map(|(l, x)| (x / (l + 2.0 * nu)).powi(2))
            .sum()
    }
}

/// Builds antenna `n`'s AC subproblem so that the weighted MSE sum equals
/// `½ cᵀ A c + dᵀ c + constant` (plus the `-ln w` terms).
pub fn assemble_quadratic(
    n: usize,
    state: &SolverState,
    em: &[EmChannel],
    budget: &LinkBudget,
    rho2: f64,
) -> QuadraticSubproblem {
    let users = em.len();
    let len = em[0].block_len() - 1;
    let mut a = DMatrix::<f64>::zeros(len, len);
    let mut d = DVector::<f64>::zeros(len);
    let mut constant = 0.0;
    for k in 0..users {
        let vk = state.v[k];
        let v2 = vk.norm_sqr();
        let bw = budget.weights[k] * state.w[k];
        if bw == 0.0 {
            continue;
        }
        constant += bw * budget.noise[k] * v2 - budget.weights[k] * state.w[k].ln();
        for i in 0..state.fd.ncols() {
            let (ak, bk) = g_affine(k, i, n, &state.fd, &state.patterns, em);
            let re = ak.map(|z| z.re);
            let im = ak.map(|z| z.im);
            // Re{a^* a^T} = Re a Re aᵀ + Im a Im aᵀ
            a.ger(2.0 * bw * v2, &re, &re, 1.0);
            a.ger(2.0 * bw * v2, &im, &im, 1.0);
            if i == k {
                let x = C64::from(1.0) - vk * bk;
                let lin = ak.map(|z| (x.conj() * vk * z).re);
                d.axpy(-2.0 * bw, &lin, 1.0);
                constant += bw * x.norm_sqr();
            } else {
                let lin = ak.map(|z| (bk.conj() * z).re);
                d.axpy(2.0 * bw * v2, &lin, 1.0);
                constant += bw * v2 * bk.norm_sqr();
            }
        }
    }
    let a = (&a + a.transpose()) * 0.5;
    QuadraticSubproblem { a, d, rho2, constant }
}

/// The two stationary points on the sphere returned by the subproblem solver.
#[derive(Debug, Clone, PartialEq)]
pub struct AcCandidates {
    /// Stationary point with `nu < -lambda_max / 2` (maximizer side).
    pub minus: DVector<f64>,
    pub nu_minus: f64,
    /// Stationary point with `nu > -lambda_min / 2` (minimizer side).
    pub plus: DVector<f64>,
    pub nu_plus: f64,
    /// The branch hit the hard case: `d` has no weight on the extreme
    /// eigenspace and the multiplier sits on the pole.
    pub hard_plus: bool,
    pub hard_minus: bool,
}

struct Branch {
    coeffs: Vec<f64>,
    offset: f64,
    hard: bool,
}

/// One branch in the eigenbasis. `gaps[i] >= 0` is the distance of eigenvalue
/// `i` from the pole, `pole` the index with zero gap. The branch solution is
/// `y_i = dt_i / (gaps_i + 2 delta)` with `delta >= 0` found by bisection.
fn solve_branch(gaps: &[f64], dt: &[f64], pole: usize, rho2: f64, gap_tol: f64, weight_tol: f64) -> Result<Branch> {
    let norm2 = |delta: f64| -> f64 {
        gaps.iter()
            .zip(dt)
            .map(|(g, x)| {
                let denom = g + 2.0 * delta;
                if denom == 0.0 {
                    if *x == 0.0 { 0.0 } else { f64::INFINITY }
                } else {
                    (x / denom).powi(2)
                }
            })
            .sum()
    };

    let pole_weight: f64 = gaps
        .iter()
        .zip(dt)
        .filter(|(g, _)| **g <= gap_tol)
        .map(|(_, x)| x * x)
        .sum();
    if pole_weight <= weight_tol * weight_tol {
        let rest: f64 = gaps
            .iter()
            .zip(dt)
            .filter(|(g, _)| **g > gap_tol)
            .map(|(g, x)| (x / g).powi(2))
            .sum();
        if rest <= rho2 {
            let mut coeffs: Vec<f64> = gaps
                .iter()
                .zip(dt)
                .map(|(g, x)| if *g > gap_tol { x / g } else { 0.0 })
                .collect();
            coeffs[pole] = (rho2 - rest).max(0.0).sqrt();
            return Ok(Branch {
                coeffs,
                offset: 0.0,
                hard: true,
            });
        }
    }

    let dnorm = dt.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut lo = 0.0;
    let mut hi = dnorm / (2.0 * rho2.sqrt());
    let mut mid = hi;
    let mut converged = false;
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let r = norm2(mid) - rho2;
        if r.abs() <= 1e-14 * rho2 {
            converged = true;
            break;
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    let residual = (norm2(mid) - rho2).abs();
    if !converged && residual > 1e-10 * rho2 {
        return Err(Error::Internal(format!(
            "norm bisection did not converge: residual {residual:e}"
        )));
    }
    Ok(Branch {
        coeffs: gaps.iter().zip(dt).map(|(g, x)| x / (g + 2.0 * mid)).collect(),
        offset: mid,
        hard: false,
    })
}

/// Both stationary points of `min ½cᵀAc + dᵀc` on `||c||^2 = rho2` whose
/// multipliers lie outside the eigenvalue range of `-A/2`.
///
/// When `d` carries no weight on an extreme eigenspace the norm curve stays
/// bounded at the pole; the branch then returns the pole multiplier with the
/// leftover radius placed along the extreme eigenvector. For `d = 0` both
/// candidates are `±rho u_min`.
pub fn solve_ac_subproblem(sub: &QuadraticSubproblem) -> Result<AcCandidates> {
    let len = sub.d.len();
    if sub.a.nrows() != len || sub.a.ncols() != len {
        return Err(Error::Shape("subproblem matrix and vector sizes differ".into()));
    }
    if !(sub.rho2 > 0.0 && sub.rho2.is_finite()) {
        return Err(Error::Domain("target squared norm must be positive".into()));
    }
    let scale = sub.a.amax().max(f64::MIN_POSITIVE);
    if (&sub.a - sub.a.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Domain("subproblem matrix is not symmetric".into()));
    }

    let eig = SymmetricEigen::new(sub.a.clone());
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs: Vec<DVector<f64>> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    let dt: Vec<f64> = vecs.iter().map(|v| v.dot(&sub.d)).collect();
    let (lmin, lmax) = (lam[0], lam[len - 1]);
    let rho = sub.rho2.sqrt();
    let dnorm = sub.d.norm();
    let lscale = lmin.abs().max(lmax.abs());

    if dnorm <= 1e-14 * (lscale * rho).max(f64::MIN_POSITIVE) {
        let u = &vecs[0];
        return Ok(AcCandidates {
            minus: u * rho,
            nu_minus: -lmin / 2.0,
            plus: u * -rho,
            nu_plus: -lmin / 2.0,
            hard_plus: true,
            hard_minus: true,
        });
    }

    let gap_tol = 1e-10 * lscale;
    let weight_tol = 1e-9 * dnorm;
    let combine = |coeffs: &[f64], sign: f64| -> DVector<f64> {
        let mut c = DVector::zeros(len);
        for (y, v) in coeffs.iter().zip(&vecs) {
            c.axpy(sign * y, v, 1.0);
        }
        // remove the last rounding in the norm
        let norm2 = c.norm_squared();
        if norm2 > 0.0 {
            c *= (sub.rho2 / norm2).sqrt();
        }
        c
    };

    let gaps_plus: Vec<f64> = lam.iter().map(|l| (l - lmin).max(0.0)).collect();
    let plus = solve_branch(&gaps_plus, &dt, 0, sub.rho2, gap_tol, weight_tol)?;
    // the maximizer side runs with reversed sign
    let gaps_minus: Vec<f64> = lam.iter().map(|l| (lmax - l).max(0.0)).collect();
    let dt_neg: Vec<f64> = dt.iter().map(|x| -x).collect();
    let minus = solve_branch(&gaps_minus, &dt_neg, len - 1, sub.rho2, gap_tol, weight_tol)?;

    Ok(AcCandidates {
        plus: combine(&plus.coeffs, -1.0),
        nu_plus: -lmin / 2.0 + plus.offset,
        minus: combine(&minus.coeffs, -1.0),
        nu_minus: -lmax / 2.0 - minus.offset,
        hard_plus: plus.hard,
        hard_minus: minus.hard,
    })
}

/// Outcome of one EM sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EmSweep {
    pub accepted: usize,
    pub hard_cases: usize,
}

/// Step 4: per-antenna AC updates in ascending antenna order. `channels`
/// holds the effective channels for `state.patterns` and is kept in sync.
pub fn update_em(
    state: &mut SolverState,
    channels: &mut [DVector<C64>],
    problem: &Problem,
    config: &SolverConfig,
) -> Result<EmSweep> {
    let rho2 = config.ac_radius2();
    let budget = &problem.budget;
    let mut sweep = EmSweep::default();
    let mut incumbent = wmmse_objective(channels, &state.fd, &state.v, &state.w, budget);
    for n in 0..problem.num_antennas() {
        let sub = assemble_quadratic(n, state, &problem.em_channels, budget, rho2);
        let cands = solve_ac_subproblem(&sub)?;
        if cands.hard_plus {
            sweep.hard_cases += 1;
        }
        let previous = state.patterns[n].clone();
        let mut best: Option<(f64, PatternCoefficients)> = None;
        for cand in [&cands.minus, &cands.plus] {
            let pattern = PatternCoefficients::from_parts(previous.dc(), cand)?;
            for (h, em) in channels.iter_mut().zip(&problem.em_channels) {
                h[n] = block_gain(&pattern, em, n);
            }
            let value = wmmse_objective(channels, &state.fd, &state.v, &state.w, budget);
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, pattern));
            }
        }
        let (value, pattern) = best.expect("two candidates");
        let keep = if value < incumbent {
            incumbent = value;
            sweep.accepted += 1;
            pattern
        } else {
            previous
        };
        for (h, em) in channels.iter_mut().zip(&problem.em_channels) {
            h[n] = block_gain(&keep, em, n);
        }
        state.patterns[n] = keep;
    }
    Ok(sweep)
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based outer iteration.
    pub iteration: usize,
    pub sum_rate: f64,
    /// Objective after step 4 of this iteration.
    pub objective: f64,
    /// Objective after steps 1, 2, 3 and 4.
    pub step_objectives: [f64; 4],
    pub step_times: [Duration; 4],
    pub em_accepted: usize,
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    pub state: SolverState,
    pub log: Vec<IterationRecord>,
    pub initial_sum_rate: f64,
    /// Objective of the initial point (with `v = 0`, `w = 1`).
    pub initial_objective: f64,
    pub converged: bool,
}

impl SolverOutput {
    pub fn final_sum_rate(&self) -> f64 {
        self.log.last().map_or(self.initial_sum_rate, |r| r.sum_rate)
    }

    pub fn iterations(&self) -> usize {
        self.log.len()
    }
}

/// Random AC parts uniform on the radius-`sqrt(4 pi - eta^2)` sphere.
pub fn random_patterns(antennas: usize, harmonics: usize, eta: f64, seed: u64) -> Vec<PatternCoefficients> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = (FOUR_PI - eta * eta).sqrt();
    (0..antennas)
        .map(|_| {
            let z = loop {
                let z = DVector::<f64>::from_fn(harmonics - 1, |_, _| StandardNormal.sample(&mut rng));
                if z.norm() > 1e-12 {
                    break z;
                }
            };
            let ac = &z * (rho / z.norm());
            PatternCoefficients::from_parts(eta, &ac).expect("valid length")
        })
        .collect()
}

/// Conjugate matched-filter columns `h_k^*`, scaled to total power `P_max`.
pub fn matched_filter(channels: &[DVector<C64>], max_power: f64) -> DMatrix<C64> {
    let nt = channels[0].len();
    let mut fd = DMatrix::from_fn(nt, channels.len(), |r, c| channels[c][r].conj());
    let p = fd.norm_squared();
    if p > 0.0 {
        fd *= C64::from((max_power / p).sqrt());
    }
    fd
}

/// Runs the alternating solver. Tri-hybrid mode starts from random AC
/// coefficients drawn from `seed`; with `freeze_em` the patterns stay
/// isotropic.
pub fn run_algorithm1(problem: &Problem, config: &SolverConfig, seed: u64) -> Result<SolverOutput> {
    let patterns = if config.freeze_em {
        let degree = crate::harmonics::degree_for_length(problem.harmonics()).expect("square block");
        vec![PatternCoefficients::isotropic(degree); problem.num_antennas()]
    } else {
        random_patterns(problem.num_antennas(), problem.harmonics(), config.eta, seed)
    };
    run_from_patterns(problem, config, patterns)
}

/// Runs the alternating solver from explicit initial patterns.
pub fn run_from_patterns(
    problem: &Problem,
    config: &SolverConfig,
    patterns: Vec<PatternCoefficients>,
) -> Result<SolverOutput> {
    config.validate()?;
    let mut channels = problem.effective_channels(&patterns)?;
    let fd = matched_filter(&channels, problem.budget.max_power);
    let users = problem.num_users();
    let mut state = SolverState {
        w: vec![1.0; users],
        v: vec![C64::from(0.0); users],
        fd,
        patterns,
    };
    let em = (!config.freeze_em).then_some(problem);
    let (log, initial_sum_rate, initial_objective, converged) =
        iterate(&mut state, &mut channels, &problem.budget, em, config)?;
    Ok(SolverOutput {
        state,
        log,
        initial_sum_rate,
        initial_objective,
        converged,
    })
}

/// Steps 1-3 only, on fixed physical channels, starting from `fd`.
pub fn run_fixed_channels(
    channels: &[DVector<C64>],
    budget: &LinkBudget,
    fd: DMatrix<C64>,
    config: &SolverConfig,
) -> Result<SolverOutput> {
    budget.validate(channels.len())?;
    check_shapes(channels, &fd)?;
    let users = channels.len();
    let mut state = SolverState {
        w: vec![1.0; users],
        v: vec![C64::from(0.0); users],
        fd,
        patterns: Vec::new(),
    };
    let mut channels = channels.to_vec();
    let (log, initial_sum_rate, initial_objective, converged) =
        iterate(&mut state, &mut channels, budget, None, config)?;
    Ok(SolverOutput {
        state,
        log,
        initial_sum_rate,
        initial_objective,
        converged,
    })
}

type IterateResult = (Vec<IterationRecord>, f64, f64, bool);

fn iterate(
    state: &mut SolverState,
    channels: &mut [DVector<C64>],
    budget: &LinkBudget,
    em: Option<&Problem>,
    config: &SolverConfig,
) -> Result<IterateResult> {
    let initial_sum_rate = sum_rate(channels, &state.fd, &budget.weights, &budget.noise)?;
    let initial_objective = wmmse_objective(channels, &state.fd, &state.v, &state.w, budget);
    let mut previous_rate = initial_sum_rate;
    let mut log = Vec::new();
    let mut converged = false;

    for iteration in 1..=config.max_iterations {
        let mut step_objectives = [0.0; 4];
        let mut step_times = [Duration::ZERO; 4];

        let t = Instant::now();
        state.v = update_v(channels, &state.fd, &budget.noise);
        step_times[0] = t.elapsed();
        step_objectives[0] = wmmse_objective(channels, &state.fd, &state.v, &state.w, budget);

        let t = Instant::now();
        state.w = update_w(channels, &state.fd, &state.v, &budget.noise)?;
        step_times[1] = t.elapsed();
        step_objectives[1] = wmmse_objective(channels, &state.fd, &state.v, &state.w, budget);

        let t = Instant::now();
        state.fd = update_fd(channels, &state.v, &state.w, budget, config.bisection_tolerance)?.fd;
        step_times[2] = t.elapsed();
        step_objectives[2] = wmmse_objective(channels, &state.fd, &state.v, &state.w, budget);

        let t = Instant::now();
        let mut em_accepted = 0;
        if let Some(problem) = em {
            em_accepted = update_em(state, channels, problem, config)?.accepted;
        }
        step_times[3] = t.elapsed();
        step_objectives[3] = wmmse_objective(channels, &state.fd, &state.v, &state.w, budget);

        let rate = sum_rate(channels, &state.fd, &budget.weights, &budget.noise)?;
        log.push(IterationRecord {
            iteration,
            sum_rate: rate,
            objective: step_objectives[3],
            step_objectives,
            step_times,
            em_accepted,
        });
        let change = (rate - previous_rate).abs() / previous_rate.abs().max(f64::MIN_POSITIVE);
        previous_rate = rate;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok((log, initial_sum_rate, initial_objective, converged))
}
