//! Projection of optimized patterns onto a finite set of sampled, physically
//! realizable radiation patterns.
//!
//! Candidate sets are read from a JSON document:
//!
//! ```json
//! {
//!   "normalize": true,
//!   "patterns": [
//!     { "name": "iso", "source": "lab",
//!       "theta_deg": [0, 90, 180], "phi_deg": [0, 180],
//!       "gain": [[1, 1], [1, 1], [1, 1]] }
//!   ]
//! }
//! ```
//!
//! `gain` is linear and row-major over `theta_deg x phi_deg`, either as nested
//! rows or as one flat array. Both axes must be strictly ascending. A
//! `phi_deg` axis whose last entry equals the first plus 360 is treated as a
//! closed grid; the duplicate column is used for interpolation only.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::Deserialize;

use crate::channel::{GainPattern, Scenario, C64};
use crate::error::{Error, Result};
use crate::harmonics::{PatternCoefficients, FOUR_PI};
use crate::wmmse::{run_fixed_channels, sum_rate, LinkBudget, SolverConfig, SolverState};

const CLOSED_GRID_TOLERANCE: f64 = 1e-9;

/// One sampled pattern on a rectangular `(theta, phi)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePattern {
    pub name: String,
    pub source: Option<String>,
    thetas: Vec<f64>,
    phis: Vec<f64>,
    /// `theta x phi`, row-major.
    gains: DMatrix<f64>,
    /// Quadrature power of the samples as given.
    raw_power: f64,
    closed: bool,
}

impl CandidatePattern {
    /// Builds a pattern from samples (radians). Gains may be of any sign; use
    /// [`CandidatePattern::min_gain`] to audit.
    pub fn new(name: impl Into<String>, thetas: Vec<f64>, phis: Vec<f64>, gains: DMatrix<f64>) -> Result<Self> {
        let name = name.into();
        if thetas.is_empty() || phis.is_empty() {
            return Err(Error::Load(format!("pattern '{name}': empty grid axis")));
        }
        if gains.shape() != (thetas.len(), phis.len()) {
            return Err(Error::Load(format!(
                "pattern '{name}': gain is {}x{}, grid is {}x{}",
                gains.nrows(),
                gains.ncols(),
                thetas.len(),
                phis.len()
            )));
        }
        check_axis(&name, "theta_deg", &thetas)?;
        check_axis(&name, "phi_deg", &phis)?;
        if thetas[0] < -CLOSED_GRID_TOLERANCE || thetas[thetas.len() - 1] > PI + CLOSED_GRID_TOLERANCE {
            return Err(Error::Load(format!("pattern '{name}': theta_deg outside [0, 180]")));
        }
        let span = phis[phis.len() - 1] - phis[0];
        if span > 2.0 * PI + CLOSED_GRID_TOLERANCE {
            return Err(Error::Load(format!("pattern '{name}': phi_deg spans more than 360")));
        }
        if let Some(pos) = gains.iter().position(|g| !g.is_finite()) {
            return Err(Error::Load(format!(
                "pattern '{name}': gain[{}][{}] is not finite",
                pos % thetas.len(),
                pos / thetas.len()
            )));
        }
        let closed = phis.len() > 1 && (span - 2.0 * PI).abs() <= CLOSED_GRID_TOLERANCE;
        let mut pattern = Self {
            name,
            source: None,
            thetas,
            phis,
            gains,
            raw_power: 0.0,
            closed,
        };
        pattern.raw_power = pattern.power();
        Ok(pattern)
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.gains
    }

    /// Power of the samples before any normalization.
    pub fn raw_power(&self) -> f64 {
        self.raw_power
    }

    pub fn min_gain(&self) -> f64 {
        self.gains.min()
    }

    fn theta_weights(&self) -> Vec<f64> {
        let n = self.thetas.len();
        (0..n)
            .map(|i| {
                let lo = if i == 0 { 0.0 } else { 0.5 * (self.thetas[i - 1] + self.thetas[i]) };
                let hi = if i + 1 == n { PI } else { 0.5 * (self.thetas[i] + self.thetas[i + 1]) };
                lo.cos() - hi.cos()
            })
            .collect()
    }

    fn phi_weights(&self) -> Vec<f64> {
        let n = if self.closed { self.phis.len() - 1 } else { self.phis.len() };
        let mut w = vec![0.0; self.phis.len()];
        if n == 1 {
            w[0] = 2.0 * PI;
            return w;
        }
        let node = |j: isize| -> f64 {
            let m = n as isize;
            let wrapped = j.rem_euclid(m) as usize;
            self.phis[wrapped] + 2.0 * PI * (j.div_euclid(m) as f64)
        };
        for (j, wj) in w.iter_mut().enumerate().take(n) {
            let j = j as isize;
            *wj = 0.5 * (node(j + 1) - node(j - 1));
        }
        w
    }

    /// `∫ G^2 dΩ` by cell quadrature over the sample grid.
    pub fn power(&self) -> f64 {
        let wt = self.theta_weights();
        let wp = self.phi_weights();
        let mut acc = 0.0;
        for (i, a) in wt.iter().enumerate() {
            for (j, b) in wp.iter().enumerate() {
                acc += a * b * self.gains[(i, j)].powi(2);
            }
        }
        acc
    }

    fn scale(&mut self, factor: f64) {
        self.gains *= factor;
    }

    /// Bilinear interpolation; `theta` is clamped to the grid, `phi` wraps.
    pub fn gain_at(&self, theta: f64, phi: f64) -> f64 {
        let (i0, i1, ti) = bracket(&self.thetas, theta.clamp(self.thetas[0], self.thetas[self.thetas.len() - 1]));
        let first = self.phis[0];
        let x = first + (phi - first).rem_euclid(2.0 * PI);
        let (j0, j1, tj) = if self.phis.len() == 1 {
            (0, 0, 0.0)
        } else if x <= self.phis[self.phis.len() - 1] {
            bracket(&self.phis, x)
        } else {
            // open grid: the gap from the last node back to the first
            let last = self.phis.len() - 1;
            let width = first + 2.0 * PI - self.phis[last];
            (last, 0, (x - self.phis[last]) / width)
        };
        let g = &self.gains;
        let lower = (1.0 - tj) * g[(i0, j0)] + tj * g[(i0, j1)];
        let upper = (1.0 - tj) * g[(i1, j0)] + tj * g[(i1, j1)];
        (1.0 - ti) * lower + ti * upper
    }
}

impl GainPattern for CandidatePattern {
    fn gain(&self, theta: f64, phi: f64) -> f64 {
        self.gain_at(theta, phi)
    }
}

fn check_axis(name: &str, field: &str, axis: &[f64]) -> Result<()> {
    if let Some(i) = axis.iter().position(|x| !x.is_finite()) {
        return Err(Error::Load(format!("pattern '{name}': {field}[{i}] is not finite")));
    }
    if let Some(i) = axis.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Load(format!(
            "pattern '{name}': {field} is not strictly ascending at index {}",
            i + 1
        )));
    }
    Ok(())
}

/// Interval `(i, i + 1, t)` of an ascending axis containing `x` (in range).
fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    if axis.len() == 1 {
        return (0, 0, 0.0);
    }
    let i = axis.partition_point(|&a| a <= x).clamp(1, axis.len() - 1) - 1;
    let t = ((x - axis[i]) / (axis[i + 1] - axis[i])).clamp(0.0, 1.0);
    (i, i + 1, t)
}

/// A finite set of realizable patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePatternSet {
    pub patterns: Vec<CandidatePattern>,
    /// Every pattern was rescaled to power `4 pi`.
    pub normalized: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateFile {
    #[serde(default = "default_true")]
    normalize: bool,
    patterns: Vec<CandidateRecord>,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateRecord {
    name: String,
    #[serde(default)]
    source: Option<String>,
    theta_deg: Vec<f64>,
    phi_deg: Vec<f64>,
    gain: GainSamples,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GainSamples {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl CandidatePatternSet {
    /// Validated set; with `normalize` every pattern is rescaled to `4 pi`.
    /// Negative samples are rejected.
    pub fn new(mut patterns: Vec<CandidatePattern>, normalize: bool) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::Load("candidate set is empty".into()));
        }
        for (r, p) in patterns.iter().enumerate() {
            if let Some(pos) = p.gains.iter().position(|&g| g < 0.0) {
                let rows = p.gains.nrows();
                return Err(Error::Load(format!(
                    "pattern {r} ('{}'): gain[{}][{}] = {} is negative",
                    p.name,
                    pos % rows,
                    pos / rows,
                    p.gains[pos]
                )));
            }
        }
        if normalize {
            for p in &mut patterns {
                normalize_pattern(p)?;
            }
        }
        Ok(Self {
            patterns,
            normalized: normalize,
        })
    }

    /// Samples spherical-harmonic patterns on a uniform closed grid without
    /// sign checks or rescaling.
    pub fn from_coefficients(patterns: &[PatternCoefficients], n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta < 2 || n_phi < 2 {
            return Err(Error::Domain("sampling grid needs at least 2x2 nodes".into()));
        }
        let thetas: Vec<f64> = (0..n_theta).map(|i| PI * i as f64 / (n_theta - 1) as f64).collect();
        let phis: Vec<f64> = (0..n_phi).map(|j| 2.0 * PI * j as f64 / (n_phi - 1) as f64).collect();
        let patterns = patterns
            .iter()
            .enumerate()
            .map(|(n, c)| {
                let gains = DMatrix::from_fn(n_theta, n_phi, |i, j| c.gain(thetas[i], phis[j]));
                CandidatePattern::new(format!("sampled-{n}"), thetas.clone(), phis.clone(), gains)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            patterns,
            normalized: false,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CandidateFile = serde_json::from_str(text).map_err(|e| Error::Load(format!("candidate file: {e}")))?;
        let patterns = file
            .patterns
            .into_iter()
            .enumerate()
            .map(|(r, rec)| {
                let rows = rec.theta_deg.len();
                let cols = rec.phi_deg.len();
                let gains = match rec.gain {
                    GainSamples::Rows(rows_data) => {
                        if rows_data.len() != rows {
                            return Err(Error::Load(format!(
                                "patterns[{r}] ('{}'): gain has {} rows, theta_deg has {rows} entries",
                                rec.name,
                                rows_data.len()
                            )));
                        }
                        if let Some(i) = rows_data.iter().position(|row| row.len() != cols) {
                            return Err(Error::Load(format!(
                                "patterns[{r}] ('{}'): gain row {i} has {} entries, phi_deg has {cols}",
                                rec.name,
                                rows_data[i].len()
                            )));
                        }
                        DMatrix::from_fn(rows, cols, |i, j| rows_data[i][j])
                    }
                    GainSamples::Flat(flat) => {
                        if flat.len() != rows * cols {
                            return Err(Error::Load(format!(
                                "patterns[{r}] ('{}'): flat gain has {} entries, expected {}",
                                rec.name,
                                flat.len(),
                                rows * cols
                            )));
                        }
                        DMatrix::from_row_slice(rows, cols, &flat)
                    }
                };
                let mut p = CandidatePattern::new(
                    rec.name,
                    rec.theta_deg.iter().map(|d| d.to_radians()).collect(),
                    rec.phi_deg.iter().map(|d| d.to_radians()).collect(),
                    gains,
                )
                .map_err(|e| Error::Load(format!("patterns[{r}]: {e}")))?;
                p.source = rec.source;
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(patterns, file.normalize)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Gain of candidate `r` (0-based).
    pub fn candidate_gain(&self, r: usize, theta: f64, phi: f64) -> Result<f64> {
        self.patterns
            .get(r)
            .map(|p| p.gain_at(theta, phi))
            .ok_or_else(|| Error::Domain(format!("candidate index {r} out of range for {} patterns", self.len())))
    }
}

fn normalize_pattern(p: &mut CandidatePattern) -> Result<()> {
    let power = p.power();
    if !(power > 0.0) {
        return Err(Error::Load(format!("pattern '{}' has zero power", p.name)));
    }
    p.scale((FOUR_PI / power).sqrt());
    Ok(())
}

pub fn load_candidates(path: &Path) -> Result<CandidatePatternSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    CandidatePatternSet::from_json(&text).map_err(|e| match e {
        Error::Load(msg) => Error::Load(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Near-uniform directions on the unit sphere.
pub fn fibonacci_directions(count: usize) -> Vec<Vector3<f64>> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let a = golden * i as f64;
            Vector3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

fn unit_direction(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Synthetic stand-in for measured patterns: `count` lobes
/// `max(cos psi, 0)^exponent` steered toward Fibonacci-sphere directions,
/// sampled on a `n_theta x n_phi` closed grid and normalized to `4 pi`.
pub fn synthetic_steered_set(count: usize, exponent: f64, n_theta: usize, n_phi: usize) -> Result<CandidatePatternSet> {
    if count == 0 {
        return Err(Error::Domain("candidate count must be positive".into()));
    }
    if !(exponent > 0.0) || n_theta < 2 || n_phi < 2 {
        return Err(Error::Domain("exponent must be positive and the grid at least 2x2".into()));
    }
    let thetas: Vec<f64> = (0..n_theta).map(|i| PI * i as f64 / (n_theta - 1) as f64).collect();
    let phis: Vec<f64> = (0..n_phi).map(|j| 2.0 * PI * j as f64 / (n_phi - 1) as f64).collect();
    let patterns = fibonacci_directions(count)
        .iter()
        .enumerate()
        .map(|(r, dir)| {
            let gains = DMatrix::from_fn(n_theta, n_phi, |i, j| {
                unit_direction(thetas[i], phis[j]).dot(dir).max(0.0).powf(exponent)
            });
            let mut p = CandidatePattern::new(format!("steered-{r}"), thetas.clone(), phis.clone(), gains)?;
            p.source = Some("synthetic".into());
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    CandidatePatternSet::new(patterns, true)
}

/// Result of the per-antenna selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    /// 0-based candidate index.
    pub index: usize,
    /// `sum (G_r - G_opt)^2` at the supplied angles.
    pub mismatch: f64,
}

/// Exhaustive search for the candidate nearest to `c_opt` at the given
/// departure angles; ties go to the lowest index.
pub fn project_antenna(
    c_opt: &PatternCoefficients,
    angles: &[(f64, f64)],
    set: &CandidatePatternSet,
) -> Result<Selection> {
    if angles.is_empty() {
        return Err(Error::Domain("projection needs at least one path angle".into()));
    }
    if set.is_empty() {
        return Err(Error::Domain("candidate set is empty".into()));
    }
    let target: Vec<f64> = angles.iter().map(|&(t, p)| c_opt.gain(t, p)).collect();
    let mut best = Selection {
        index: 0,
        mismatch: f64::INFINITY,
    };
    for (r, pattern) in set.patterns.iter().enumerate() {
        let mismatch: f64 = angles
            .iter()
            .zip(&target)
            .map(|(&(t, p), g)| (pattern.gain_at(t, p) - g).powi(2))
            .sum();
        if mismatch < best.mismatch {
            best = Selection { index: r, mismatch };
        }
    }
    Ok(best)
}

/// Departure angles of every path of every user, seen from antenna `n`.
pub fn antenna_angles(scenario: &Scenario, n: usize) -> Vec<(f64, f64)> {
    scenario
        .paths
        .iter()
        .flat_map(|user| user.iter().map(move |p| p.aods[n]))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ProjectedResult {
    pub selections: Vec<Selection>,
    pub channels: Vec<DVector<C64>>,
    pub fd: DMatrix<C64>,
    pub sum_rate: f64,
    /// Outer iterations of the refit (0 without refit).
    pub refit_iterations: usize,
}

/// Replaces each antenna's pattern by its nearest candidate, rebuilds the
/// channels from the multipath model and optionally re-optimizes `v`, `w`
/// and `F_D` with the patterns frozen.
pub fn apply_projection(
    state: &SolverState,
    scenario: &Scenario,
    set: &CandidatePatternSet,
    refit: bool,
    config: &SolverConfig,
) -> Result<ProjectedResult> {
    let nt = scenario.num_antennas();
    if state.patterns.len() != nt {
        return Err(Error::Shape(format!(
            "{} optimized patterns for {nt} antennas",
            state.patterns.len()
        )));
    }
    let selections = (0..nt)
        .map(|n| project_antenna(&state.patterns[n], &antenna_angles(scenario, n), set))
        .collect::<Result<Vec<_>>>()?;
    let chosen: Vec<&CandidatePattern> = selections.iter().map(|s| &set.patterns[s.index]).collect();
    let channels = scenario.direct_channels(&chosen)?;
    let budget = LinkBudget {
        weights: scenario.weights.clone(),
        noise: scenario.noise_powers.clone(),
        max_power: scenario.max_power,
    };
    let (fd, rate, refit_iterations) = if refit {
        let out = run_fixed_channels(&channels, &budget, state.fd.clone(), config)?;
        let rate = out.final_sum_rate();
        let iterations = out.iterations();
        (out.state.fd, rate, iterations)
    } else {
        let rate = sum_rate(&channels, &state.fd, &budget.weights, &budget.noise)?;
        (state.fd.clone(), rate, 0)
    };
    Ok(ProjectedResult {
        selections,
        channels,
        fd,
        sum_rate: rate,
        refit_iterations,
    })
}
