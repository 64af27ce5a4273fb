//! Array geometry, multipath channels and the EM-domain factorization
//! `h_k = F_EM^T h_k^EM`.
//!
//! The base station carries an `N_h x N_v` uniform planar array in the YOZ
//! plane of its body frame; body and world axes coincide. Element `n`
//! (0-based here) with `n = i_h * N_v + i_v` sits at `(0, i_h d, i_v d)`
//! relative to the first element, which is also the phase reference. This is
//! the Kronecker order `horizontal (x) vertical` of the far-field response.

use std::f64::consts::PI;

use nalgebra::{Complex, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonics::{basis_vector, truncation_length, PatternCoefficients};

pub type C64 = Complex<f64>;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Anything with a real gain per departure direction.
pub trait GainPattern {
    fn gain(&self, theta: f64, phi: f64) -> f64;
}

impl<T: GainPattern + ?Sized> GainPattern for &T {
    fn gain(&self, theta: f64, phi: f64) -> f64 {
        (**self).gain(theta, phi)
    }
}

impl GainPattern for PatternCoefficients {
    fn gain(&self, theta: f64, phi: f64) -> f64 {
        PatternCoefficients::gain(self, theta, phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    #[default]
    Far,
    Near,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpaGeometry {
    pub horizontal: usize,
    pub vertical: usize,
    /// Element spacing in meters.
    pub spacing: f64,
    /// Wavelength in meters.
    pub wavelength: f64,
}

impl UpaGeometry {
    pub fn new(horizontal: usize, vertical: usize, spacing: f64, wavelength: f64) -> Result<Self> {
        if horizontal == 0 || vertical == 0 {
            return Err(Error::Config("array needs at least one element per axis".into()));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Config(format!("element spacing {spacing} must be positive")));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::Config(format!("wavelength {wavelength} must be positive")));
        }
        Ok(Self {
            horizontal,
            vertical,
            spacing,
            wavelength,
        })
    }

    /// Half-wavelength array at carrier `frequency_hz`.
    pub fn half_wavelength(horizontal: usize, vertical: usize, frequency_hz: f64) -> Result<Self> {
        let wavelength = SPEED_OF_LIGHT / frequency_hz;
        Self::new(horizontal, vertical, wavelength / 2.0, wavelength)
    }

    pub fn num_elements(&self) -> usize {
        self.horizontal * self.vertical
    }

    /// Element positions relative to the first element, horizontal-major.
    pub fn element_positions(&self) -> Vec<Vector3<f64>> {
        let mut out = Vec::with_capacity(self.num_elements());
        for ih in 0..self.horizontal {
            for iv in 0..self.vertical {
                out.push(Vector3::new(0.0, ih as f64 * self.spacing, iv as f64 * self.spacing));
            }
        }
        out
    }
}

/// Per-element departure direction and propagation distance of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementAod {
    pub theta: f64,
    pub phi: f64,
    pub distance: f64,
}

/// One propagation path as seen from every array element.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGeometry {
    pub mode: FieldMode,
    /// `(theta^(n), phi^(n))` per element, radians.
    pub aods: Vec<(f64, f64)>,
    /// `r^(n)` per element, meters.
    pub distances: Vec<f64>,
    /// `r` from the reference element, meters.
    pub reference_distance: f64,
    /// `alpha^(n)` per element.
    pub gains: Vec<C64>,
}

impl PathGeometry {
    pub fn num_elements(&self) -> usize {
        self.aods.len()
    }

    fn check(&self, nt: usize) -> Result<()> {
        if self.aods.len() != nt || self.distances.len() != nt || self.gains.len() != nt {
            return Err(Error::Shape(format!(
                "path lists have lengths {}/{}/{}, array has {nt} elements",
                self.aods.len(),
                self.distances.len(),
                self.gains.len()
            )));
        }
        Ok(())
    }
}

/// Far-field array response `(1/sqrt(N)) e^{-j2pi phi_h k(N_h)} (x) e^{-j2pi phi_v k(N_v)}`.
pub fn far_field_arv(theta: f64, phi: f64, geom: &UpaGeometry) -> DVector<C64> {
    let nt = geom.num_elements();
    let spatial_h = geom.spacing * phi.sin() * theta.sin() / geom.wavelength;
    let spatial_v = geom.spacing * theta.cos() / geom.wavelength;
    let scale = 1.0 / (nt as f64).sqrt();
    DVector::from_fn(nt, |n, _| {
        let ih = (n / geom.vertical) as f64;
        let iv = (n % geom.vertical) as f64;
        C64::from_polar(scale, -2.0 * PI * (spatial_h * ih + spatial_v * iv))
    })
}

/// Spherical-wavefront response `a_n = (1/sqrt(N)) e^{-j 2pi/lambda (r - r^(n))}`.
pub fn near_field_arv(path: &PathGeometry, wavelength: f64) -> Result<DVector<C64>> {
    if path.reference_distance <= 0.0 || path.distances.iter().any(|&r| r <= 0.0) {
        return Err(Error::Domain("propagation distances must be positive".into()));
    }
    let nt = path.distances.len();
    let scale = 1.0 / (nt as f64).sqrt();
    let k = 2.0 * PI / wavelength;
    Ok(DVector::from_iterator(
        nt,
        path.distances
            .iter()
            .map(|&rn| C64::from_polar(scale, -k * (path.reference_distance - rn))),
    ))
}

/// Departure angles and distances from every element toward `source`.
/// `array_origin` is the world position of the first element.
pub fn path_aods(
    geom: &UpaGeometry,
    array_origin: &Vector3<f64>,
    source: &Vector3<f64>,
) -> Result<Vec<ElementAod>> {
    geom.element_positions()
        .iter()
        .map(|p| direction_to(&(array_origin + p), source))
        .collect()
}

fn direction_to(from: &Vector3<f64>, to: &Vector3<f64>) -> Result<ElementAod> {
    let delta = to - from;
    let distance = delta.norm();
    if distance <= 0.0 {
        return Err(Error::Domain("source coincides with an array element".into()));
    }
    Ok(ElementAod {
        theta: (delta.z / distance).clamp(-1.0, 1.0).acos(),
        phi: delta.y.atan2(delta.x),
        distance,
    })
}

/// Array response of a path in its own field mode.
pub fn array_response(path: &PathGeometry, geom: &UpaGeometry) -> Result<DVector<C64>> {
    path.check(geom.num_elements())?;
    match path.mode {
        FieldMode::Far => {
            let (theta, phi) = path.aods[0];
            Ok(far_field_arv(theta, phi, geom))
        }
        FieldMode::Near => near_field_arv(path, geom.wavelength),
    }
}

/// `d_{k,l}`: basis vectors at every element's departure angle, stacked.
pub fn build_basis_stack(path: &PathGeometry, degree: usize) -> DVector<f64> {
    let t = truncation_length(degree);
    let mut out = DVector::zeros(t * path.aods.len());
    for (n, &(theta, phi)) in path.aods.iter().enumerate() {
        out.rows_mut(n * t, t).copy_from(&basis_vector(theta, phi, degree));
    }
    out
}

/// Per-user EM-domain channel, `N_T` blocks of `T` entries. Block `n` holds
/// `[h^DC_(n); h^AC_(n)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmChannel {
    data: DVector<C64>,
    block: usize,
}

impl EmChannel {
    pub fn new(data: DVector<C64>, block: usize) -> Result<Self> {
        if block == 0 || !data.len().is_multiple_of(block) {
            return Err(Error::Shape(format!(
                "EM channel length {} is not a multiple of block size {block}",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain("EM channel has non-finite entries".into()));
        }
        Ok(Self { data, block })
    }

    pub fn as_vector(&self) -> &DVector<C64> {
        &self.data
    }

    pub fn block_len(&self) -> usize {
        self.block
    }

    pub fn num_antennas(&self) -> usize {
        self.data.len() / self.block
    }

    pub fn block(&self, n: usize) -> nalgebra::DVectorView<'_, C64> {
        self.data.rows(n * self.block, self.block)
    }

    pub fn dc(&self, n: usize) -> C64 {
        self.data[n * self.block]
    }

    pub fn ac(&self, n: usize) -> nalgebra::DVectorView<'_, C64> {
        self.data.rows(n * self.block + 1, self.block - 1)
    }
}

/// `h^EM_{k,l} = d_{k,l} (.) ((alpha (.) a) (x) 1_T)`.
pub fn em_path_channel(path: &PathGeometry, geom: &UpaGeometry, degree: usize) -> Result<DVector<C64>> {
    let a = array_response(path, geom)?;
    let t = truncation_length(degree);
    let stack = build_basis_stack(path, degree);
    Ok(DVector::from_fn(stack.len(), |i, _| {
        let n = i / t;
        path.gains[n] * a[n] * stack[i]
    }))
}

/// `h^EM_k = sqrt(N_T / L_k) sum_l h^EM_{k,l}`.
pub fn em_user_channel(paths: &[PathGeometry], geom: &UpaGeometry, degree: usize) -> Result<EmChannel> {
    if paths.is_empty() {
        return Err(Error::Domain("a user needs at least one path".into()));
    }
    let nt = geom.num_elements();
    let t = truncation_length(degree);
    let mut acc = DVector::zeros(nt * t);
    for path in paths {
        acc += em_path_channel(path, geom, degree)?;
    }
    acc *= C64::from((nt as f64 / paths.len() as f64).sqrt());
    EmChannel::new(acc, t)
}

/// `h_n = (c^(n))^T h^EM_(n)` for every antenna, exploiting the block-diagonal
/// structure of `F_EM`.
pub fn effective_channel(patterns: &[PatternCoefficients], em: &EmChannel) -> Result<DVector<C64>> {
    if patterns.len() != em.num_antennas() {
        return Err(Error::Shape(format!(
            "{} patterns for {} antennas",
            patterns.len(),
            em.num_antennas()
        )));
    }
    if let Some(p) = patterns.iter().find(|p| p.len() != em.block_len()) {
        return Err(Error::Shape(format!(
            "pattern length {} does not match EM block size {}",
            p.len(),
            em.block_len()
        )));
    }
    Ok(DVector::from_iterator(
        patterns.len(),
        patterns.iter().enumerate().map(|(n, p)| block_gain(p, em, n)),
    ))
}

pub(crate) fn block_gain(pattern: &PatternCoefficients, em: &EmChannel, n: usize) -> C64 {
    em.block(n)
        .iter()
        .zip(pattern.as_vector().iter())
        .map(|(h, c)| h * *c)
        .sum()
}

/// Channel evaluated directly from the multipath model,
/// `sqrt(N_T/L) sum_l alpha (.) g (.) a` with `g^(n) = G^(n)(theta^(n), phi^(n))`.
pub fn direct_channel_oracle<P: GainPattern>(
    paths: &[PathGeometry],
    geom: &UpaGeometry,
    patterns: &[P],
) -> Result<DVector<C64>> {
    let nt = geom.num_elements();
    if patterns.len() != nt {
        return Err(Error::Shape(format!("{} patterns for {nt} antennas", patterns.len())));
    }
    if paths.is_empty() {
        return Err(Error::Domain("a user needs at least one path".into()));
    }
    let mut h = DVector::zeros(nt);
    for path in paths {
        let a = array_response(path, geom)?;
        for n in 0..nt {
            let (theta, phi) = path.aods[n];
            h[n] += path.gains[n] * a[n] * patterns[n].gain(theta, phi);
        }
    }
    Ok(h * C64::from((nt as f64 / paths.len() as f64).sqrt()))
}

/// Parameters for random scenario generation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub horizontal: usize,
    pub vertical: usize,
    /// Element spacing in wavelengths.
    pub spacing_wavelengths: f64,
    pub frequency_hz: f64,
    pub users: usize,
    pub paths: usize,
    pub bs_position: [f64; 3],
    /// Users are dropped uniformly in a ground disc of this radius (m).
    pub user_radius: f64,
    /// Scatterer heights are uniform in `[0, scatterer_height]` (m).
    pub scatterer_height: f64,
    pub noise_power: f64,
    pub max_power: f64,
    /// `beta_k`; empty means all ones.
    pub weights: Vec<f64>,
    pub field_mode: FieldMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            horizontal: 3,
            vertical: 3,
            spacing_wavelengths: 0.5,
            frequency_hz: 30e9,
            users: 2,
            paths: 3,
            bs_position: [0.0, 0.0, 10.0],
            user_radius: 200.0,
            scatterer_height: 20.0,
            noise_power: dbm_to_watts(-95.0),
            max_power: dbm_to_watts(10.0),
            weights: Vec::new(),
            field_mode: FieldMode::Far,
        }
    }
}

impl ScenarioConfig {
    pub fn geometry(&self) -> Result<UpaGeometry> {
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(Error::Config(format!("frequency_hz {} must be positive", self.frequency_hz)));
        }
        let wavelength = SPEED_OF_LIGHT / self.frequency_hz;
        UpaGeometry::new(
            self.horizontal,
            self.vertical,
            self.spacing_wavelengths * wavelength,
            wavelength,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        if self.users == 0 {
            return Err(Error::Config("users must be at least 1".into()));
        }
        if self.paths == 0 {
            return Err(Error::Config("paths must be at least 1".into()));
        }
        if !(self.user_radius > 0.0) {
            return Err(Error::Config("user_radius must be positive".into()));
        }
        if !(self.scatterer_height >= 0.0) {
            return Err(Error::Config("scatterer_height must be nonnegative".into()));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(Error::Config("noise power must be positive".into()));
        }
        if !(self.max_power > 0.0 && self.max_power.is_finite()) {
            return Err(Error::Config("max power must be positive".into()));
        }
        if !self.weights.is_empty() && self.weights.len() != self.users {
            return Err(Error::Config(format!(
                "user_weights has {} entries for {} users",
                self.weights.len(),
                self.users
            )));
        }
        if self.weights.iter().any(|&b| !(b > 0.0 && b.is_finite())) {
            return Err(Error::Config("user_weights must be positive".into()));
        }
        if self.bs_position.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("bs_position must be finite".into()));
        }
        Ok(())
    }
}

/// One realization of the downlink: geometry, users, paths and budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub geometry: UpaGeometry,
    pub mode: FieldMode,
    pub bs_position: Vector3<f64>,
    pub user_positions: Vec<Vector3<f64>>,
    /// `paths[k]` lists the `L_k` paths of user `k`; path 0 is line of sight.
    pub paths: Vec<Vec<PathGeometry>>,
    pub noise_powers: Vec<f64>,
    pub weights: Vec<f64>,
    pub max_power: f64,
}

impl Scenario {
    pub fn num_users(&self) -> usize {
        self.paths.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.geometry.num_elements()
    }

    pub fn em_channels(&self, degree: usize) -> Result<Vec<EmChannel>> {
        self.paths
            .iter()
            .map(|p| em_user_channel(p, &self.geometry, degree))
            .collect()
    }

    /// Physical channels for arbitrary per-antenna gain patterns.
    pub fn direct_channels<P: GainPattern>(&self, patterns: &[P]) -> Result<Vec<DVector<C64>>> {
        self.paths
            .iter()
            .map(|p| direct_channel_oracle(p, &self.geometry, patterns))
            .collect()
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Builds the view of one path from every element. `bounce` is the first
/// interaction point (the user itself for line of sight); `tail` is the
/// remaining distance from `bounce` to the user.
pub fn make_path(
    geom: &UpaGeometry,
    mode: FieldMode,
    array_origin: &Vector3<f64>,
    bounce: &Vector3<f64>,
    tail: f64,
    gain: C64,
) -> Result<PathGeometry> {
    let reference = direction_to(array_origin, bounce)?;
    let reference_distance = reference.distance + tail;
    let per_element = path_aods(geom, array_origin, bounce)?;
    let nt = geom.num_elements();
    let distances: Vec<f64> = per_element.iter().map(|e| e.distance + tail).collect();
    let (aods, gains) = match mode {
        FieldMode::Far => (vec![(reference.theta, reference.phi); nt], vec![gain; nt]),
        FieldMode::Near => (
            per_element.iter().map(|e| (e.theta, e.phi)).collect(),
            distances
                .iter()
                .map(|&rn| gain * (reference_distance / rn))
                .collect(),
        ),
    };
    Ok(PathGeometry {
        mode,
        aods,
        distances,
        reference_distance,
        gains,
    })
}

fn uniform_in_disc(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let a = 2.0 * PI * rng.random::<f64>();
    (r * a.cos(), r * a.sin())
}

fn complex_normal(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws a scenario; a pure function of `(config, seed)`.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let geometry = config.geometry()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bs = Vector3::from(config.bs_position);
    let lambda = geometry.wavelength;

    let mut user_positions = Vec::with_capacity(config.users);
    let mut paths = Vec::with_capacity(config.users);
    for _ in 0..config.users {
        let (x, y) = uniform_in_disc(&mut rng, config.user_radius);
        let user = Vector3::new(x, y, 0.0);
        let mut user_paths = Vec::with_capacity(config.paths);
        for l in 0..config.paths {
            let (bounce, tail) = if l == 0 {
                (user, 0.0)
            } else {
                let (sx, sy) = uniform_in_disc(&mut rng, config.user_radius);
                let sz = config.scatterer_height * rng.random::<f64>();
                let s = Vector3::new(sx, sy, sz);
                (s, (user - s).norm())
            };
            let length = (bounce - bs).norm() + tail;
            let gain = complex_normal(&mut rng) * (lambda / (4.0 * PI * length));
            user_paths.push(make_path(&geometry, config.field_mode, &bs, &bounce, tail, gain)?);
        }
        user_positions.push(user);
        paths.push(user_paths);
    }

    let weights = if config.weights.is_empty() {
        vec![1.0; config.users]
    } else {
        config.weights.clone()
    };
    Ok(Scenario {
        geometry,
        mode: config.field_mode,
        bs_position: bs,
        user_positions,
        paths,
        noise_powers: vec![config.noise_power; config.users],
        weights,
        max_power: config.max_power,
    })
}
