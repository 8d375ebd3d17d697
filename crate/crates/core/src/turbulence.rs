//! Beam-wander series: synthesis from a target spectrum, spectral estimation,
//! and parametric site profiles.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{csv, Error, Result};

/// Default per-sample clip, 0.04 degrees.
pub const DEFAULT_CLIP_RAD: f64 = 0.04 * PI / 180.0;
/// Per-axis RMS wander of the 2.6 km profile, 0.02 degrees.
pub const OUTDOOR_2_6KM_RMS_RAD: f64 = 0.02 * PI / 180.0;
pub const DEFAULT_SAMPLE_RATE: f64 = 10_000.0;
/// Upper edge of every builtin profile.
pub const PROFILE_MAX_HZ: f64 = 1000.0;
/// Frequency spacing of the builtin profile tables.
pub const PROFILE_BIN_HZ: f64 = 0.05;

/// One-sided angular power spectral density, rad^2/Hz per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumProfile {
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
    pub label: String,
}

impl SpectrumProfile {
    pub fn new(freqs: Vec<f64>, psd: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if freqs.len() != psd.len() {
            return Err(Error::Config(format!(
                "{} frequencies but {} psd values",
                freqs.len(),
                psd.len()
            )));
        }
        if freqs.is_empty() {
            return Err(Error::Config("empty spectrum profile".into()));
        }
        if freqs.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::Config("frequencies must be finite and non-negative".into()));
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("frequencies must be strictly increasing".into()));
        }
        if psd.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config("psd values must be finite and non-negative".into()));
        }
        Ok(Self {
            freqs,
            psd,
            label: label.into(),
        })
    }

    /// Identically zero over `[0, max_hz]`.
    pub fn zero(max_hz: f64) -> Self {
        Self {
            freqs: vec![0.0, max_hz],
            psd: vec![0.0, 0.0],
            label: "zero".into(),
        }
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Linear interpolation; zero outside the tabulated band.
    pub fn value_at(&self, f: f64) -> f64 {
        let n = self.freqs.len();
        if n == 0 || f < self.freqs[0] || f > self.freqs[n - 1] {
            return 0.0;
        }
        let hi = self.freqs.partition_point(|&x| x < f);
        if hi == 0 {
            return self.psd[0];
        }
        if self.freqs[hi.min(n - 1)] == f {
            return self.psd[hi];
        }
        let lo = hi - 1;
        let t = (f - self.freqs[lo]) / (self.freqs[hi] - self.freqs[lo]);
        self.psd[lo] + t * (self.psd[hi] - self.psd[lo])
    }

    /// Trapezoidal integral over the whole table, rad^2.
    pub fn integral(&self) -> f64 {
        self.band_power(f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Trapezoidal integral of the interpolated profile over `[lo, hi]`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let mut total = 0.0;
        for w in 0..self.freqs.len().saturating_sub(1) {
            let (a, b) = (self.freqs[w].max(lo), self.freqs[w + 1].min(hi));
            if b <= a {
                continue;
            }
            total += 0.5 * (self.value_at(a) + self.value_at(b)) * (b - a);
        }
        total
    }

    /// Highest tabulated frequency carrying non-zero power.
    pub fn max_active_freq(&self) -> Option<f64> {
        self.freqs
            .iter()
            .zip(&self.psd)
            .rev()
            .find(|(_, p)| **p > 0.0)
            .map(|(f, _)| *f)
    }

    /// Multiplies the wander amplitude by `factor` (power by `factor^2`).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            freqs: self.freqs.clone(),
            psd: self.psd.iter().map(|p| p * factor * factor).collect(),
            label: self.label.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        csv::write_table(
            out,
            &[format!("spectrum profile: {}", self.label), "one-sided angular PSD per axis".into()],
            &["frequency_hz", "psd_rad2_per_hz"],
            self.freqs.iter().zip(&self.psd).map(|(f, p)| vec![*f, *p]),
        )
    }

    pub fn read_csv<R: BufRead>(input: R, label: impl Into<String>) -> Result<Self> {
        let rows = csv::read_table(input, 2)?;
        let (freqs, psd) = rows.into_iter().map(|r| (r[0], r[1])).unzip();
        Self::new(freqs, psd, label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinProfile {
    Indoor60m,
    Outdoor250m,
    Outdoor2_6km,
}

impl BuiltinProfile {
    pub const ALL: [BuiltinProfile; 3] = [Self::Indoor60m, Self::Outdoor250m, Self::Outdoor2_6km];

    pub fn name(self) -> &'static str {
        match self {
            Self::Indoor60m => "indoor60m",
            Self::Outdoor250m => "outdoor250m",
            Self::Outdoor2_6km => "outdoor2_6km",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Lookup(name.to_string()))
    }

    fn shape(self) -> ProfileShape {
        match self {
            Self::Indoor60m => ProfileShape {
                rms: 0.0025 * PI / 180.0,
                corner_hz: 2.0,
                bump_fraction: 0.0,
            },
            Self::Outdoor250m => ProfileShape {
                rms: 0.01 * PI / 180.0,
                corner_hz: 5.0,
                bump_fraction: 0.04,
            },
            Self::Outdoor2_6km => ProfileShape {
                rms: OUTDOOR_2_6KM_RMS_RAD,
                corner_hz: 5.0,
                bump_fraction: 0.10,
            },
        }
    }

    pub fn profile(self) -> SpectrumProfile {
        self.shape().tabulate(self.name())
    }

    /// Power carried by the 100-300 Hz bump, rad^2.
    pub fn bump_power(self) -> f64 {
        let s = self.shape();
        s.bump_fraction * s.rms * s.rms
    }
}

pub fn builtin_profile(name: &str) -> Result<SpectrumProfile> {
    BuiltinProfile::parse(name).map(BuiltinProfile::profile)
}

/// Low-frequency roll-off `1 / (1 + (f/fc)^(8/3))` plus a raised-cosine bump
/// spanning 100-300 Hz. Normalized so the band integral is `rms^2`, of which
/// `bump_fraction` sits in the bump.
#[derive(Debug, Clone, Copy)]
struct ProfileShape {
    rms: f64,
    corner_hz: f64,
    bump_fraction: f64,
}

const BUMP_LO_HZ: f64 = 100.0;
const BUMP_HI_HZ: f64 = 300.0;

impl ProfileShape {
    fn rolloff(&self, f: f64) -> f64 {
        1.0 / (1.0 + (f / self.corner_hz).powf(8.0 / 3.0))
    }

    fn bump(f: f64) -> f64 {
        if (BUMP_LO_HZ..=BUMP_HI_HZ).contains(&f) {
            let s = (PI * (f - BUMP_LO_HZ) / (BUMP_HI_HZ - BUMP_LO_HZ)).sin();
            s * s
        } else {
            0.0
        }
    }

    fn tabulate(&self, label: &str) -> SpectrumProfile {
        let n = (PROFILE_MAX_HZ / PROFILE_BIN_HZ).round() as usize + 1;
        let freqs: Vec<f64> = (0..n).map(|i| i as f64 * PROFILE_BIN_HZ).collect();
        let trapz = |g: &dyn Fn(f64) -> f64| {
            freqs
                .windows(2)
                .map(|w| 0.5 * (g(w[0]) + g(w[1])) * (w[1] - w[0]))
                .sum::<f64>()
        };
        let roll_area = trapz(&|f| self.rolloff(f));
        let bump_area = trapz(&Self::bump);
        let total = self.rms * self.rms;
        let roll_gain = (1.0 - self.bump_fraction) * total / roll_area;
        let bump_gain = self.bump_fraction * total / bump_area;
        let psd = freqs
            .iter()
            .map(|&f| roll_gain * self.rolloff(f) + bump_gain * Self::bump(f))
            .collect();
        SpectrumProfile {
            freqs,
            psd,
            label: label.to_string(),
        }
    }
}

/// Two-axis angular wander, rad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WanderSeries {
    pub sample_rate: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub seed: u64,
    pub clip: f64,
    /// Samples (over both axes) that hit the clip.
    pub clipped: usize,
}

impl WanderSeries {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.x.len() as f64 / self.sample_rate
    }

    pub fn rms_x(&self) -> f64 {
        rms(&self.x)
    }

    pub fn rms_y(&self) -> f64 {
        rms(&self.y)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let dt = 1.0 / self.sample_rate;
        csv::write_table(
            out,
            &[
                format!("beam wander series, seed {}", self.seed),
                format!("sample_rate_hz {}, clip_rad {}", self.sample_rate, self.clip),
            ],
            &["time_s", "x_rad", "y_rad"],
            (0..self.len()).map(|i| vec![i as f64 * dt, self.x[i], self.y[i]]),
        )
    }
}

pub(crate) fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisConfig {
    pub sample_rate: f64,
    /// Symmetric clip applied after synthesis; `f64::INFINITY` disables it.
    pub clip: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            sample_rate: DEFAULT_SAMPLE_RATE,
            clip: DEFAULT_CLIP_RAD,
        }
    }
}

/// Synthesizes wander with the default clip.
pub fn synthesize(profile: &SpectrumProfile, duration: f64, sample_rate: f64, seed: u64) -> Result<WanderSeries> {
    synthesize_with(
        profile,
        duration,
        &SynthesisConfig {
            sample_rate,
            ..SynthesisConfig::default()
        },
        seed,
    )
}

/// Inverse-spectral synthesis: every FFT bin gets the deterministic amplitude
/// `sqrt(2 S(f) df)` and an independent uniform phase, so the series variance
/// equals the sum of `S(f) df` over the bins exactly (before clipping).
pub fn synthesize_with(
    profile: &SpectrumProfile,
    duration: f64,
    cfg: &SynthesisConfig,
    seed: u64,
) -> Result<WanderSeries> {
    let fs = cfg.sample_rate;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::Config(format!("sample rate must be positive, got {fs}")));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::Config(format!("duration must be positive, got {duration}")));
    }
    let nyquist = fs / 2.0;
    if let Some(top) = profile.max_active_freq() {
        if top > nyquist {
            return Err(Error::Config(format!(
                "profile carries power at {top} Hz, above the {nyquist} Hz Nyquist limit"
            )));
        }
    }
    let n = (duration * fs).round() as usize;
    if n < 2 * profile.len() {
        return Err(Error::Config(format!(
            "{n} samples cannot carry a {}-bin profile (need at least {})",
            profile.len(),
            2 * profile.len()
        )));
    }

    let x = synthesize_axis(profile, n, fs, seed, 0);
    let y = synthesize_axis(profile, n, fs, seed, 1);
    let mut clipped = 0;
    let clip_axis = |v: Vec<f64>, clipped: &mut usize| -> Vec<f64> {
        v.into_iter()
            .map(|s| {
                if s.abs() > cfg.clip {
                    *clipped += 1;
                    s.signum() * cfg.clip
                } else {
                    s
                }
            })
            .collect()
    };
    let x = clip_axis(x, &mut clipped);
    let y = clip_axis(y, &mut clipped);
    Ok(WanderSeries {
        sample_rate: fs,
        x,
        y,
        seed,
        clip: cfg.clip,
        clipped,
    })
}

fn synthesize_axis(profile: &SpectrumProfile, n: usize, fs: f64, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let df = fs / n as f64;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    // Bins 1..ceil(n/2); the Nyquist bin of an even length stays empty.
    for k in 1..n.div_ceil(2) {
        let phase: f64 = rng.random::<f64>() * 2.0 * PI;
        let power = profile.value_at(k as f64 * df) * df;
        if power == 0.0 {
            continue;
        }
        let half_amp = 0.5 * (2.0 * power).sqrt();
        let c = Complex64::from_polar(half_amp, phase);
        spectrum[k] = c;
        spectrum[n - k] = c.conj();
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spectrum);
    spectrum.into_iter().map(|c| c.re).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Self::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Self::Rectangular => vec![1.0; n],
        }
    }
}

/// Averaged-periodogram settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchConfig {
    pub segments: usize,
    /// Fractional overlap between consecutive segments, `[0, 1)`.
    pub overlap: f64,
    pub window: Window,
    /// Fix the bin width instead of deriving the segment length from
    /// `segments`.
    pub bin_width: Option<f64>,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            segments: 10,
            overlap: 0.5,
            window: Window::Hann,
            bin_width: None,
        }
    }
}

pub const MIN_SEGMENT_LEN: usize = 16;

/// One-sided PSD of a single channel by averaging windowed, mean-removed
/// periodograms. Returns `(freqs, psd)`.
pub fn welch(samples: &[f64], sample_rate: f64, cfg: &WelchConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if cfg.segments == 0 {
        return Err(Error::Config("at least one segment required".into()));
    }
    if !(0.0..1.0).contains(&cfg.overlap) {
        return Err(Error::Config(format!("overlap {} outside [0, 1)", cfg.overlap)));
    }
    let n = samples.len();
    let k = cfg.segments;
    let seg_len = match cfg.bin_width {
        Some(bw) if bw > 0.0 => (sample_rate / bw).round() as usize,
        Some(bw) => return Err(Error::Config(format!("bin width must be positive, got {bw}"))),
        None => (n as f64 / (1.0 + (k - 1) as f64 * (1.0 - cfg.overlap))).floor() as usize,
    };
    if seg_len < MIN_SEGMENT_LEN {
        return Err(Error::Size(format!(
            "{n} samples give {seg_len}-sample segments (minimum {MIN_SEGMENT_LEN})"
        )));
    }
    let hop = |len: usize| (((1.0 - cfg.overlap) * len as f64).floor() as usize).max(1);
    let mut seg_len = seg_len;
    if cfg.bin_width.is_none() {
        while seg_len > MIN_SEGMENT_LEN && (k - 1) * hop(seg_len) + seg_len > n {
            seg_len -= 1;
        }
    }
    let step = hop(seg_len);
    if (k - 1) * step + seg_len > n {
        return Err(Error::Size(format!(
            "{k} segments of {seg_len} samples need {} samples, have {n}",
            (k - 1) * step + seg_len
        )));
    }

    let window = cfg.window.coefficients(seg_len);
    let win_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(seg_len);
    let bins = seg_len / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); seg_len];
    for s in 0..k {
        let seg = &samples[s * step..s * step + seg_len];
        let mean = seg.iter().sum::<f64>() / seg_len as f64;
        for (b, (v, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex64::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
    }
    let scale = 1.0 / (sample_rate * win_power * k as f64);
    let psd = acc
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let one_sided = if i == 0 || (seg_len % 2 == 0 && i == seg_len / 2) { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let df = sample_rate / seg_len as f64;
    let freqs = (0..bins).map(|i| i as f64 * df).collect();
    Ok((freqs, psd))
}

/// Per-axis PSD estimate of a wander series (x and y periodograms averaged).
pub fn estimate_psd(series: &WanderSeries, n_segments: usize) -> Result<SpectrumProfile> {
    estimate_psd_with(
        series,
        &WelchConfig {
            segments: n_segments,
            ..WelchConfig::default()
        },
    )
}

pub fn estimate_psd_with(series: &WanderSeries, cfg: &WelchConfig) -> Result<SpectrumProfile> {
    let (freqs, px) = welch(&series.x, series.sample_rate, cfg)?;
    let (_, py) = welch(&series.y, series.sample_rate, cfg)?;
    let psd = px.iter().zip(&py).map(|(a, b)| 0.5 * (a + b)).collect();
    SpectrumProfile::new(freqs, psd, format!("estimate (seed {})", series.seed))
}

/// Largest relative deviation of band-integrated power between an estimate
/// and its reference, over log-spaced bands covering `[lo, hi]`. Bands whose
/// reference power is below `floor` times the in-band total are skipped.
pub fn band_deviation(
    reference: &SpectrumProfile,
    estimate: &SpectrumProfile,
    lo: f64,
    hi: f64,
    bands_per_decade: usize,
    floor: f64,
) -> f64 {
    let df = estimate.freqs.get(1).map_or(1.0, |f| f - estimate.freqs[0]);
    let decades = (hi / lo).log10();
    let n_bands = ((decades * bands_per_decade as f64).ceil() as usize).max(1);
    let edges: Vec<f64> = (0..=n_bands)
        .map(|i| lo * 10f64.powf(decades * i as f64 / n_bands as f64))
        .collect();
    let in_band = |f: f64, a: f64, b: f64| f >= a && f < b;
    let mut total_ref = 0.0;
    let mut bands = Vec::with_capacity(n_bands);
    for w in edges.windows(2) {
        let (mut est, mut refp) = (0.0, 0.0);
        for (f, p) in estimate.freqs.iter().zip(&estimate.psd) {
            if in_band(*f, w[0], w[1]) {
                est += p * df;
                refp += reference.value_at(*f) * df;
            }
        }
        total_ref += refp;
        bands.push((est, refp));
    }
    bands
        .into_iter()
        .filter(|(_, r)| *r > 0.0 && *r >= floor * total_ref)
        .map(|(e, r)| (e / r - 1.0).abs())
        .fold(0.0, f64::max)
}
