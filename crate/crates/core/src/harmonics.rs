//! Truncated real spherical-harmonics basis and antenna gain synthesis.
//!
//! Harmonics are indexed by degree `u >= 0` and order `-u <= q <= u`, and
//! flattened to `t = u^2 + u + q + 1` (1-based). Vectors returned here store
//! harmonic `t` at position `t - 1`. A truncation degree `U` keeps
//! `T = (U + 1)^2` harmonics.
//!
//! The associated Legendre functions include the Condon-Shortley phase
//! `(-1)^q`, so `P_1^1(x) = -sqrt(1 - x^2)`. Flipping this convention negates
//! some basis functions and the corresponding coefficients; no gain value
//! changes.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Total power `||c||^2` of every admissible pattern.
pub const FOUR_PI: f64 = 4.0 * PI;

/// Tolerance on `||c||^2 = 4 pi`.
pub const POWER_TOLERANCE: f64 = 1e-8;

/// Default truncation degree (`T = 25`).
pub const DEFAULT_DEGREE: usize = 4;

/// Number of harmonics kept by truncation degree `degree`.
pub fn truncation_length(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Inverse of [`truncation_length`] for perfect squares.
pub fn degree_for_length(len: usize) -> Option<usize> {
    let root = (len as f64).sqrt().round() as usize;
    (root >= 1 && root * root == len).then(|| root - 1)
}

/// Degree/order pair of one real harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HarmonicIndex {
    pub degree: usize,
    pub order: i64,
}

impl HarmonicIndex {
    pub fn new(degree: usize, order: i64) -> Result<Self> {
        if order.unsigned_abs() as usize > degree {
            return Err(Error::Domain(format!(
                "order {order} exceeds degree {degree}"
            )));
        }
        Ok(Self { degree, order })
    }

    /// 1-based flat index `u^2 + u + q + 1`.
    pub fn flat(&self) -> usize {
        let u = self.degree as i64;
        (u * u + u + self.order + 1) as usize
    }

    /// Recovers the pair from a 1-based flat index.
    pub fn from_flat(t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::Domain("flat harmonic index starts at 1".into()));
        }
        let degree = ((t - 1) as f64).sqrt().floor() as usize;
        // guard against rounding in the square root
        let degree = if (degree + 1) * (degree + 1) < t {
            degree + 1
        } else if degree * degree > t - 1 {
            degree - 1
        } else {
            degree
        };
        let order = (t - 1) as i64 - (degree * degree + degree) as i64;
        Self::new(degree, order)
    }
}

/// 1-based flat index of harmonic `(u, q)`.
pub fn index_of(degree: usize, order: i64) -> Result<usize> {
    HarmonicIndex::new(degree, order).map(|h| h.flat())
}

/// `(u, q)` of a 1-based flat index.
pub fn degree_order_of(t: usize) -> Result<(usize, i64)> {
    HarmonicIndex::from_flat(t).map(|h| (h.degree, h.order))
}

/// Associated Legendre function `P_u^q(x)` with the Condon-Shortley phase,
/// computed by upward recurrence in the degree starting from `P_q^q`.
pub fn assoc_legendre(degree: usize, order: usize, x: f64) -> Result<f64> {
    if order > degree {
        return Err(Error::Domain(format!(
            "order {order} exceeds degree {degree}"
        )));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("legendre argument {x} outside [-1, 1]")));
    }
    Ok(legendre_upward(degree, order, x))
}

fn legendre_upward(degree: usize, order: usize, x: f64) -> f64 {
    let mut pmm = 1.0;
    if order > 0 {
        let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
        let mut fact = 1.0;
        for _ in 0..order {
            pmm *= -fact * somx2;
            fact += 2.0;
        }
    }
    if degree == order {
        return pmm;
    }
    let mut pmm1 = x * (2 * order + 1) as f64 * pmm;
    for l in (order + 2)..=degree {
        let pll = (x * (2 * l - 1) as f64 * pmm1 - (l + order - 1) as f64 * pmm) / (l - order) as f64;
        pmm = pmm1;
        pmm1 = pll;
    }
    pmm1
}

/// `N_u^q = sqrt((2u+1)/(4 pi) * (u-q)!/(u+q)!)`.
fn normalization(degree: usize, order: usize) -> f64 {
    let mut ratio = 1.0;
    for i in (degree - order + 1)..=(degree + order) {
        ratio /= i as f64;
    }
    ((2 * degree + 1) as f64 / FOUR_PI * ratio).sqrt()
}

/// Real spherical harmonic `Y_u^q(theta, phi)`; `theta` is the inclination
/// from +z and `phi` the azimuth from +x.
pub fn real_sph_harmonic(degree: usize, order: i64, theta: f64, phi: f64) -> Result<f64> {
    HarmonicIndex::new(degree, order)?;
    if !theta.is_finite() || !phi.is_finite() {
        return Err(Error::Domain("angles must be finite".into()));
    }
    let m = order.unsigned_abs() as usize;
    let p = legendre_upward(degree, m, theta.cos().clamp(-1.0, 1.0));
    let n = normalization(degree, m);
    Ok(match order {
        0 => n * p,
        q if q > 0 => std::f64::consts::SQRT_2 * n * p * (m as f64 * phi).cos(),
        _ => std::f64::consts::SQRT_2 * n * p * (m as f64 * phi).sin(),
    })
}

/// Basis vector `b(theta, phi)` of length `(U+1)^2` in flat-index order.
pub fn basis_vector(theta: f64, phi: f64, degree: usize) -> DVector<f64> {
    let len = truncation_length(degree);
    let mut out = DVector::zeros(len);
    let x = theta.cos().clamp(-1.0, 1.0);
    let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();

    // P_q^q for every order, then the upward recurrence per order.
    let mut diag = 1.0;
    for m in 0..=degree {
        if m > 0 {
            diag *= -((2 * m - 1) as f64) * somx2;
        }
        let (cos_m, sin_m) = if m == 0 {
            (1.0, 0.0)
        } else {
            let a = m as f64 * phi;
            (a.cos(), a.sin())
        };
        let mut prev = 0.0;
        let mut cur = diag;
        for u in m..=degree {
            if u > m {
                let next = if u == m + 1 {
                    x * (2 * m + 1) as f64 * cur
                } else {
                    (x * (2 * u - 1) as f64 * cur - (u + m - 1) as f64 * prev) / (u - m) as f64
                };
                prev = cur;
                cur = next;
            }
            let n = normalization(u, m);
            let base = u * u + u;
            if m == 0 {
                out[base] = n * cur;
            } else {
                let s = std::f64::consts::SQRT_2 * n * cur;
                out[base + m] = s * cos_m;
                out[base - m] = s * sin_m;
            }
        }
    }
    out
}

/// Real harmonic coefficient vector of one antenna's gain pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternCoefficients {
    coeffs: DVector<f64>,
    degree: usize,
}

impl PatternCoefficients {
    pub fn new(coeffs: DVector<f64>) -> Result<Self> {
        let degree = degree_for_length(coeffs.len()).ok_or_else(|| {
            Error::Shape(format!(
                "coefficient length {} is not a perfect square",
                coeffs.len()
            ))
        })?;
        Ok(Self { coeffs, degree })
    }

    /// Constant pattern `G = 1` (all power in the DC harmonic).
    pub fn isotropic(degree: usize) -> Self {
        let mut coeffs = DVector::zeros(truncation_length(degree));
        coeffs[0] = FOUR_PI.sqrt();
        Self { coeffs, degree }
    }

    /// Pattern with the DC coefficient pinned to `dc` and the given AC part.
    pub fn from_parts(dc: f64, ac: &DVector<f64>) -> Result<Self> {
        let mut coeffs = DVector::zeros(ac.len() + 1);
        coeffs[0] = dc;
        coeffs.rows_mut(1, ac.len()).copy_from(ac);
        Self::new(coeffs)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn dc(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn ac(&self) -> DVector<f64> {
        self.coeffs.rows(1, self.coeffs.len() - 1).into_owned()
    }

    pub fn set_ac(&mut self, ac: &DVector<f64>) -> Result<()> {
        if ac.len() + 1 != self.coeffs.len() {
            return Err(Error::Shape(format!(
                "AC length {} does not match T-1 = {}",
                ac.len(),
                self.coeffs.len() - 1
            )));
        }
        self.coeffs.rows_mut(1, ac.len()).copy_from(ac);
        Ok(())
    }

    /// `||c||^2`.
    pub fn power(&self) -> f64 {
        pattern_power(self.coeffs.as_slice())
    }

    /// Rescales the whole vector so that `||c||^2 = 4 pi`.
    pub fn normalized(&self) -> Result<Self> {
        let p = self.power();
        if p <= 0.0 || !p.is_finite() {
            return Err(Error::Domain("cannot normalize a zero pattern".into()));
        }
        Ok(Self {
            coeffs: &self.coeffs * (FOUR_PI / p).sqrt(),
            degree: self.degree,
        })
    }

    /// `b(theta, phi)^T c`. May be negative; see [`audit_positivity`].
    pub fn gain(&self, theta: f64, phi: f64) -> f64 {
        basis_vector(theta, phi, self.degree).dot(&self.coeffs)
    }
}

/// `b(theta, phi)^T c` for a raw coefficient slice.
pub fn synthesize_gain(coeffs: &[f64], theta: f64, phi: f64) -> Result<f64> {
    let degree = degree_for_length(coeffs.len()).ok_or_else(|| {
        Error::Shape(format!(
            "coefficient length {} is not a perfect square",
            coeffs.len()
        ))
    })?;
    let b = basis_vector(theta, phi, degree);
    Ok(b.iter().zip(coeffs).map(|(x, y)| x * y).sum())
}

/// `||c||^2`, equal by Parseval to the sphere integral of the squared gain.
pub fn pattern_power(coeffs: &[f64]) -> f64 {
    coeffs.iter().map(|c| c * c).sum()
}

/// Product quadrature on the sphere: Gauss-Legendre nodes in `cos(theta)`
/// times uniform nodes in `phi`.
#[derive(Debug, Clone)]
pub struct AngularGrid {
    thetas: Vec<f64>,
    phis: Vec<f64>,
    theta_weights: Vec<f64>,
    phi_weight: f64,
}

impl AngularGrid {
    /// Exact for band-limited integrands of total degree up to
    /// `min(2 n_theta - 1, n_phi - 1)`.
    pub fn gauss_legendre(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(Error::Domain("angular grid needs at least one node per axis".into()));
        }
        let (x, w) = gauss_legendre_nodes(n_theta);
        // ascending inclination means descending cos(theta)
        let mut pairs: Vec<(f64, f64)> = x.into_iter().zip(w).map(|(x, w)| (x.acos(), w)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let phis = (0..n_phi)
            .map(|j| 2.0 * PI * j as f64 / n_phi as f64)
            .collect();
        Ok(Self {
            thetas: pairs.iter().map(|p| p.0).collect(),
            theta_weights: pairs.iter().map(|p| p.1).collect(),
            phis,
            phi_weight: 2.0 * PI / n_phi as f64,
        })
    }

    /// Grid used for positivity audits.
    pub fn audit_default() -> Self {
        Self::gauss_legendre(64, 128).expect("nonempty grid")
    }

    /// Smallest grid integrating products of two degree-`degree` harmonics exactly.
    pub fn exact_for_degree(degree: usize) -> Self {
        Self::gauss_legendre(degree + 1, 2 * degree + 2).expect("nonempty grid")
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    pub fn len(&self) -> usize {
        self.thetas.len() * self.phis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(theta, phi, weight)` for every node; weights in steradians.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.thetas.iter().zip(&self.theta_weights).flat_map(move |(&t, &wt)| {
            self.phis.iter().map(move |&p| (t, p, wt * self.phi_weight))
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.theta_weights.iter().sum::<f64>() * self.phi_weight * self.phis.len() as f64
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
fn gauss_legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Weighted node sum approximating the integral of `f` over the sphere.
pub fn sphere_quadrature<F: FnMut(f64, f64) -> f64>(mut f: F, grid: &AngularGrid) -> f64 {
    grid.nodes().map(|(t, p, w)| w * f(t, p)).sum()
}

/// Minimum synthesized gain over the grid nodes.
pub fn min_gain_on_grid(pattern: &PatternCoefficients, grid: &AngularGrid) -> f64 {
    grid.nodes()
        .map(|(t, p, _)| pattern.gain(t, p))
        .fold(f64::INFINITY, f64::min)
}

/// Result of checking a synthesized pattern for non-physical negative gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityAudit {
    pub min_gain: f64,
    /// Raised when the minimum is not strictly positive.
    pub flagged: bool,
}

pub fn audit_positivity(pattern: &PatternCoefficients, grid: &AngularGrid) -> PositivityAudit {
    let min_gain = min_gain_on_grid(pattern, grid);
    PositivityAudit {
        min_gain,
        flagged: min_gain <= 0.0,
    }
}
