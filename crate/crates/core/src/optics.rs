//! Receiver geometry and single-mode-fiber coupling.
//!
//! Two fast-steering mirrors (FSM1, FSM2) sit `d1` apart. The collimator and
//! PSD1 are `d2` behind FSM2, PSD2 is `d3` behind FSM2. A mirror tilt of `a`
//! deflects the reflected beam by `2a`, so with both mirrors in the path the
//! beam leaves FSM2 at `2(a1 - a2)` and hits the collimator at
//! `2 d1 a1 + 2 d2 (a1 - a2)`.
//!
//! Incoming wander is injected upstream of FSM1: a tilt `t` adds `t (d1 + d2)`
//! at the collimator/PSD1 plane and `t (d1 + d3)` at PSD2; a transverse shift
//! adds directly.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Geometric and optical constants of the receiver. Lengths in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalLayout {
    /// FSM1 to FSM2.
    pub d1: f64,
    /// FSM2 to collimator; PSD1 sits at the same effective distance.
    pub d2: f64,
    /// FSM2 to PSD2.
    pub d3: f64,
    /// Collimator focal length.
    pub focal_length: f64,
    pub wavelength: f64,
    /// Mode-field radius of the fiber at its tip.
    pub mode_field_radius: f64,
    /// Waist radius of the incident collimated beam.
    pub beam_waist: f64,
}

impl Default for OpticalLayout {
    fn default() -> Self {
        Self {
            d1: 0.09,
            d2: 0.28,
            d3: 0.76,
            focal_length: 8.1e-3,
            wavelength: 810e-9,
            mode_field_radius: 2.5e-6,
            beam_waist: 0.6e-3,
        }
    }
}

impl OpticalLayout {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("d1", self.d1),
            ("d2", self.d2),
            ("d3", self.d3),
            ("focal_length", self.focal_length),
            ("wavelength", self.wavelength),
            ("mode_field_radius", self.mode_field_radius),
            ("beam_waist", self.beam_waist),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidLayout(format!("{name} must be positive, got {v}")));
            }
        }
        if self.d3 == self.d2 {
            return Err(Error::InvalidLayout(
                "d3 equals d2; the angle observable x1 - x2 is degenerate".into(),
            ));
        }
        Ok(())
    }

    /// Effective mode-field radius at the collimator input, `lambda F / (pi w0)`.
    pub fn effective_mode_radius(&self) -> f64 {
        self.wavelength * self.focal_length / (PI * self.mode_field_radius)
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Coupling efficiency at perfect alignment.
    pub fn peak_efficiency(&self) -> f64 {
        coupling_efficiency(self, &BeamIncidence::aligned())
    }
}

/// Effective mode-field radius, rejecting non-positive inputs.
pub fn derive_mode_radius(layout: &OpticalLayout) -> Result<f64> {
    for (name, v) in [
        ("focal_length", layout.focal_length),
        ("wavelength", layout.wavelength),
        ("mode_field_radius", layout.mode_field_radius),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidLayout(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(layout.effective_mode_radius())
}

/// Tilt range and quantization of the steering mirrors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorLimits {
    /// Symmetric angular range, rad.
    pub range: f64,
    /// Quantization step, rad.
    pub resolution: f64,
}

impl Default for MirrorLimits {
    fn default() -> Self {
        Self {
            range: 5e-3,
            resolution: 0.25e-6,
        }
    }
}

impl MirrorLimits {
    fn max_steps(&self) -> i64 {
        // 5 mrad / 0.25 urad is 20000.000000000004 in floating point.
        (self.range / self.resolution + 1e-9).floor() as i64
    }

    /// Quantize and clamp an angle. Returns the step count and whether the
    /// angle had to be clamped.
    fn to_steps(&self, angle: f64) -> (i64, bool) {
        let max = self.max_steps();
        let raw = (angle / self.resolution).round();
        if raw > max as f64 {
            (max, true)
        } else if raw < -(max as f64) {
            (-max, true)
        } else {
            (raw as i64, false)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MirrorAxis {
    Alpha1,
    Beta1,
    Alpha2,
    Beta2,
}

impl MirrorAxis {
    pub const ALL: [MirrorAxis; 4] = [Self::Alpha1, Self::Beta1, Self::Alpha2, Self::Beta2];

    fn index(self) -> usize {
        match self {
            Self::Alpha1 => 0,
            Self::Beta1 => 1,
            Self::Alpha2 => 2,
            Self::Beta2 => 3,
        }
    }
}

/// Tilt of both mirrors. Angles are held as integer step counts so every
/// readback is an exact multiple of the resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorState {
    steps: [i64; 4],
    limits: MirrorLimits,
}

impl Default for MirrorState {
    fn default() -> Self {
        Self::new(MirrorLimits::default())
    }
}

impl MirrorState {
    pub fn new(limits: MirrorLimits) -> Self {
        Self { steps: [0; 4], limits }
    }

    pub fn with_angles(limits: MirrorLimits, alpha1: f64, beta1: f64, alpha2: f64, beta2: f64) -> Self {
        let mut s = Self::new(limits);
        s.set(MirrorAxis::Alpha1, alpha1);
        s.set(MirrorAxis::Beta1, beta1);
        s.set(MirrorAxis::Alpha2, alpha2);
        s.set(MirrorAxis::Beta2, beta2);
        s
    }

    pub fn limits(&self) -> MirrorLimits {
        self.limits
    }

    /// Command an axis; returns `true` if the command was clamped.
    pub fn set(&mut self, axis: MirrorAxis, angle: f64) -> bool {
        let (steps, clamped) = self.limits.to_steps(angle);
        self.steps[axis.index()] = steps;
        clamped
    }

    pub fn get(&self, axis: MirrorAxis) -> f64 {
        self.steps[axis.index()] as f64 * self.limits.resolution
    }

    pub fn steps(&self, axis: MirrorAxis) -> i64 {
        self.steps[axis.index()]
    }

    pub fn alpha1(&self) -> f64 {
        self.get(MirrorAxis::Alpha1)
    }
    pub fn beta1(&self) -> f64 {
        self.get(MirrorAxis::Beta1)
    }
    pub fn alpha2(&self) -> f64 {
        self.get(MirrorAxis::Alpha2)
    }
    pub fn beta2(&self) -> f64 {
        self.get(MirrorAxis::Beta2)
    }

    /// Whether `angle` lies inside the mirror range (before quantization).
    pub fn in_range(&self, angle: f64) -> bool {
        angle.abs() <= self.limits.max_steps() as f64 * self.limits.resolution + 0.5 * self.limits.resolution
    }
}

/// Incoming-beam wander at FSM1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub tilt_x: f64,
    pub tilt_y: f64,
    pub shift_x: f64,
    pub shift_y: f64,
}

impl Disturbance {
    pub fn tilt(tilt_x: f64, tilt_y: f64) -> Self {
        Self {
            tilt_x,
            tilt_y,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.tilt_x, self.tilt_y, self.shift_x, self.shift_y]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl std::ops::Add for Disturbance {
    type Output = Disturbance;

    fn add(self, rhs: Self) -> Self {
        Self {
            tilt_x: self.tilt_x + rhs.tilt_x,
            tilt_y: self.tilt_y + rhs.tilt_y,
            shift_x: self.shift_x + rhs.shift_x,
            shift_y: self.shift_y + rhs.shift_y,
        }
    }
}

/// Beam offset at the collimator input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamIncidence {
    pub r_h: f64,
    pub r_v: f64,
    pub theta_h: f64,
    pub theta_v: f64,
    pub r_prime: f64,
    pub gamma: f64,
}

impl BeamIncidence {
    pub fn aligned() -> Self {
        Self::from_components(0.0, 0.0, 0.0, 0.0)
    }

    pub fn from_components(r_h: f64, r_v: f64, theta_h: f64, theta_v: f64) -> Self {
        Self {
            r_h,
            r_v,
            theta_h,
            theta_v,
            r_prime: r_h.hypot(r_v),
            gamma: combined_tilt(theta_h, theta_v),
        }
    }
}

/// `arccos(cos a * cos b)` evaluated without the cancellation of `acos` near 1.
///
/// Uses `1 - cos a cos b = 2 sin^2(a/2) + 2 cos a sin^2(b/2)` and
/// `acos(1 - 2u) = 2 asin(sqrt(u))`.
pub fn combined_tilt(a: f64, b: f64) -> f64 {
    let sa = (0.5 * a).sin();
    let sb = (0.5 * b).sin();
    let u = sa * sa + a.cos() * sb * sb;
    2.0 * u.max(0.0).sqrt().min(1.0).asin()
}

pub fn trace_incidence(layout: &OpticalLayout, mirrors: &MirrorState, dist: &Disturbance) -> BeamIncidence {
    let lever = layout.d1 + layout.d2;
    let r_h = 2.0 * layout.d1 * mirrors.alpha1()
        + 2.0 * layout.d2 * (mirrors.alpha1() - mirrors.alpha2())
        + dist.shift_x
        + dist.tilt_x * lever;
    let r_v = 2.0 * layout.d1 * mirrors.beta1()
        + 2.0 * layout.d2 * (mirrors.beta1() - mirrors.beta2())
        + dist.shift_y
        + dist.tilt_y * lever;
    let theta_h = 2.0 * (mirrors.alpha1() - mirrors.alpha2()) + dist.tilt_x;
    let theta_v = 2.0 * (mirrors.beta1() - mirrors.beta2()) + dist.tilt_y;
    BeamIncidence::from_components(r_h, r_v, theta_h, theta_v)
}

/// Mirror tilts that null both `r'` and `gamma` for a static disturbance.
/// The result is quantized and clamped like any other command.
pub fn aligning_mirrors(layout: &OpticalLayout, dist: &Disturbance, limits: MirrorLimits) -> MirrorState {
    let solve = |shift: f64, tilt: f64| {
        let first = -(shift + tilt * layout.d1) / (2.0 * layout.d1);
        (first, first + 0.5 * tilt)
    };
    let (a1, a2) = solve(dist.shift_x, dist.tilt_x);
    let (b1, b2) = solve(dist.shift_y, dist.tilt_y);
    MirrorState::with_angles(limits, a1, b1, a2, b2)
}

/// Beam centroids on the two position-sensitive detectors, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdPair {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub noise_sigma: f64,
}

impl PsdPair {
    /// Angle observable `x1 - x2`.
    pub fn angle_x(&self) -> f64 {
        self.x1 - self.x2
    }
    pub fn angle_y(&self) -> f64 {
        self.y1 - self.y2
    }
}

/// Seeded Gaussian read noise shared by both detectors.
#[derive(Debug, Clone)]
pub struct PsdNoise {
    sigma: f64,
    rng: ChaCha8Rng,
}

/// Default per-axis read noise, metres.
pub const DEFAULT_PSD_NOISE: f64 = 1e-6;

impl PsdNoise {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self {
            sigma: sigma.max(0.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn sample(&mut self) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.sigma * z
    }
}

/// Noiseless centroid positions on PSD1 and PSD2.
pub fn psd_positions(layout: &OpticalLayout, mirrors: &MirrorState, dist: &Disturbance) -> PsdPair {
    let (d1, d2, d3) = (layout.d1, layout.d2, layout.d3);
    let (a1, a2, b1, b2) = (mirrors.alpha1(), mirrors.alpha2(), mirrors.beta1(), mirrors.beta2());
    PsdPair {
        x1: 2.0 * (d1 + d2) * a1 - 2.0 * d2 * a2 + dist.shift_x + dist.tilt_x * (d1 + d2),
        y1: 2.0 * (d1 + d2) * b1 - 2.0 * d2 * b2 + dist.shift_y + dist.tilt_y * (d1 + d2),
        x2: 2.0 * d1 * a1 + 2.0 * d3 * (a1 - a2) + dist.shift_x + dist.tilt_x * (d1 + d3),
        y2: 2.0 * d1 * b1 + 2.0 * d3 * (b1 - b2) + dist.shift_y + dist.tilt_y * (d1 + d3),
        noise_sigma: 0.0,
    }
}

pub fn psd_readings(
    layout: &OpticalLayout,
    mirrors: &MirrorState,
    dist: &Disturbance,
    noise: &mut PsdNoise,
) -> PsdPair {
    let mut p = psd_positions(layout, mirrors, dist);
    p.x1 += noise.sample();
    p.y1 += noise.sample();
    p.x2 += noise.sample();
    p.y2 += noise.sample();
    p.noise_sigma = noise.sigma();
    p
}

/// Closed-form Gaussian-to-Gaussian coupling efficiency for a decentred,
/// tilted beam on an unbounded collimator aperture.
pub fn coupling_efficiency(layout: &OpticalLayout, inc: &BeamIncidence) -> f64 {
    let wm = layout.effective_mode_radius();
    let ws = layout.beam_waist;
    let k = layout.wavenumber();
    let sum = wm * wm + ws * ws;
    let amplitude = 2.0 * wm * ws / sum;
    let exponent = -(4.0 * inc.r_prime * inc.r_prime + k * k * inc.gamma * inc.gamma * wm * wm * ws * ws)
        / (4.0 * sum);
    let root = amplitude * exponent.exp();
    (root * root).clamp(0.0, 1.0)
}

/// Sampling of the integration plane for [`overlap_efficiency_numeric`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub half_width: f64,
    pub n: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            half_width: 4e-3,
            n: 512,
        }
    }
}

impl GridSpec {
    /// Default grid, widened when the beam offset needs more room.
    pub fn for_incidence(layout: &OpticalLayout, inc: &BeamIncidence) -> Self {
        let base = Self::default();
        let needed = 4.0 * (inc.r_prime + layout.beam_waist);
        Self {
            half_width: base.half_width.max(needed),
            n: base.n,
        }
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    fn coordinates(&self) -> Vec<f64> {
        let dx = self.spacing();
        (0..self.n).map(|i| -self.half_width + i as f64 * dx).collect()
    }
}

/// Complex field samples on a square grid symmetric about the origin,
/// row-major with `x` along rows.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub half_width: f64,
    pub n: usize,
    pub values: Vec<Complex64>,
}

impl FieldGrid {
    fn from_separable(grid: &GridSpec, fx: &[Complex64], fy: &[Complex64]) -> Self {
        let mut values = Vec::with_capacity(grid.n * grid.n);
        for ax in fx {
            values.extend(fy.iter().map(|ay| ax * ay));
        }
        Self {
            half_width: grid.half_width,
            n: grid.n,
            values,
        }
    }
}

fn check_grid(layout: &OpticalLayout, inc: &BeamIncidence, grid: &GridSpec) -> Result<()> {
    if grid.n < 16 {
        return Err(Error::Resolution(format!("need at least 16 samples per axis, got {}", grid.n)));
    }
    let ws = layout.beam_waist;
    let needed = 4.0 * ws.max(inc.r_prime + ws);
    if grid.half_width < needed {
        return Err(Error::Resolution(format!(
            "half width {:.3e} m below 4 x (offset + waist) = {:.3e} m",
            grid.half_width, needed
        )));
    }
    let dx = grid.spacing();
    let k = layout.wavenumber();
    let phase_step = k * inc.theta_h.abs().max(inc.theta_v.abs()) * dx;
    if phase_step > PI / 4.0 {
        return Err(Error::Resolution(format!(
            "tilt phase advances {phase_step:.3} rad per cell (limit pi/4)"
        )));
    }
    let narrowest = ws.min(layout.effective_mode_radius());
    if dx > narrowest / 4.0 {
        return Err(Error::Resolution(format!(
            "cell {dx:.3e} m too coarse for a {narrowest:.3e} m beam"
        )));
    }
    Ok(())
}

/// Incident Gaussian beam of waist `ws`, decentred by `(r_h, r_v)` and
/// carrying the linear tilt phase `k (theta_h x + theta_v y)`.
pub fn incident_field(layout: &OpticalLayout, inc: &BeamIncidence, grid: &GridSpec) -> FieldGrid {
    let ws = layout.beam_waist;
    let k = layout.wavenumber();
    let norm = (2.0 / (PI * ws * ws)).sqrt();
    let coords = grid.coordinates();
    let factor = |x: f64, offset: f64, tilt: f64| {
        let envelope = (-(x - offset) * (x - offset) / (ws * ws)).exp();
        Complex64::from_polar(envelope, k * tilt * x)
    };
    let fx: Vec<Complex64> = coords.iter().map(|&x| norm * factor(x, inc.r_h, inc.theta_h)).collect();
    let fy: Vec<Complex64> = coords.iter().map(|&y| factor(y, inc.r_v, inc.theta_v)).collect();
    FieldGrid::from_separable(grid, &fx, &fy)
}

/// Fiber mode imaged to the collimator input, radius `w_m`.
pub fn fiber_mode(layout: &OpticalLayout, grid: &GridSpec) -> FieldGrid {
    let wm = layout.effective_mode_radius();
    let norm = (2.0 / (PI * wm * wm)).sqrt();
    let coords = grid.coordinates();
    let g = |x: f64| Complex64::new((-x * x / (wm * wm)).exp(), 0.0);
    let fx: Vec<Complex64> = coords.iter().map(|&x| norm * g(x)).collect();
    let fy: Vec<Complex64> = coords.iter().map(|&y| g(y)).collect();
    FieldGrid::from_separable(grid, &fx, &fy)
}

/// Coupling efficiency by direct 2-D trapezoidal integration of the
/// normalized overlap `|<E, F>|^2 / <E, E>`.
pub fn overlap_efficiency_numeric(layout: &OpticalLayout, inc: &BeamIncidence, grid: &GridSpec) -> Result<f64> {
    check_grid(layout, inc, grid)?;
    let e = incident_field(layout, inc, grid);
    let f = fiber_mode(layout, grid);
    let n = grid.n;
    let dx = grid.spacing();
    let weight = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };

    let mut overlap = Complex64::new(0.0, 0.0);
    let mut power = 0.0;
    for i in 0..n {
        let wi = weight(i);
        let row = i * n;
        for j in 0..n {
            let w = wi * weight(j);
            let ev = e.values[row + j];
            overlap += w * ev.conj() * f.values[row + j];
            power += w * ev.norm_sqr();
        }
    }
    let area = dx * dx;
    Ok(overlap.norm_sqr() * area * area / (power * area))
}
