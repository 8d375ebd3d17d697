//! Turning coupling efficiency into detector signals.
//!
//! Laser runs read a fiber photodiode. Photon-pair runs count signal and idler
//! singles plus coincidences; the pair source is a Poisson emitter whose rate
//! is quoted as the coincidence rate measured directly at the transmitter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Laser,
    Spdc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub kind: SourceKind,
    /// Laser power reaching the receiver front end, W.
    pub laser_power_w: f64,
    /// Pump power of the pair source, mW.
    pub pump_power_mw: f64,
    /// Transmitter-side coincidence rate per mW of pump, Hz/mW.
    pub pair_rate_per_mw: f64,
    /// Free-space channel loss ahead of the collimator, fraction.
    pub channel_loss: f64,
    /// Per-detector single-photon detection efficiency.
    pub detector_efficiency: f64,
    /// Per-detector dark count rate, Hz.
    pub dark_rate: f64,
    /// Coincidence window, s.
    pub coincidence_window: f64,
    /// Relative Gaussian noise of the photodiode reading.
    pub photodiode_rel_noise: f64,
    /// Absolute photodiode noise floor, W.
    pub photodiode_floor_w: f64,
    /// Relative RMS of slow pair-source brightness fluctuation.
    pub brightness_rel_rms: f64,
    /// Correlation time of the brightness fluctuation, s.
    pub brightness_corr_time: f64,
}

impl SourceModel {
    pub fn laser() -> Self {
        Self {
            kind: SourceKind::Laser,
            laser_power_w: 1e-3,
            pump_power_mw: 0.1,
            pair_rate_per_mw: 9.0e4,
            channel_loss: 0.16,
            detector_efficiency: 0.6,
            dark_rate: 100.0,
            coincidence_window: 1e-9,
            photodiode_rel_noise: 0.005,
            photodiode_floor_w: 1e-9,
            brightness_rel_rms: 0.0,
            brightness_corr_time: 10.0,
        }
    }

    pub fn spdc() -> Self {
        Self {
            kind: SourceKind::Spdc,
            ..Self::laser()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fraction = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        fraction("channel_loss", self.channel_loss)?;
        fraction("detector_efficiency", self.detector_efficiency)?;
        for (name, v) in [
            ("laser_power_w", self.laser_power_w),
            ("pump_power_mw", self.pump_power_mw),
            ("pair_rate_per_mw", self.pair_rate_per_mw),
            ("dark_rate", self.dark_rate),
            ("coincidence_window", self.coincidence_window),
            ("photodiode_rel_noise", self.photodiode_rel_noise),
            ("photodiode_floor_w", self.photodiode_floor_w),
            ("brightness_rel_rms", self.brightness_rel_rms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.kind == SourceKind::Spdc && self.detector_efficiency == 0.0 {
            return Err(Error::Validation("pair counting needs a non-zero detector efficiency".into()));
        }
        if !(self.brightness_corr_time > 0.0) {
            return Err(Error::Validation("brightness_corr_time must be positive".into()));
        }
        Ok(())
    }

    /// Fraction of the channel that reaches the collimator.
    pub fn transmission(&self) -> f64 {
        1.0 - self.channel_loss
    }

    /// Mean photodiode power at coupling efficiency `eta`, W.
    pub fn expected_power(&self, eta: f64) -> f64 {
        self.laser_power_w * self.transmission() * eta
    }

    /// Expected true-coincidence rate at coupling efficiency `eta`, Hz.
    pub fn expected_true_coincidence_rate(&self, eta: f64) -> f64 {
        self.pump_power_mw * self.pair_rate_per_mw * self.transmission() * eta
    }

    /// Expected rates `(idler singles, signal singles, true coincidences,
    /// accidental coincidences)` in Hz.
    pub fn expected_rates(&self, eta: f64, brightness: f64) -> PairRates {
        let eff = self.detector_efficiency;
        // Generated pairs per second: the transmitter-side coincidence rate
        // already carries both detector efficiencies.
        let generated = brightness * self.pump_power_mw * self.pair_rate_per_mw / (eff * eff);
        let signal_arrival = eta * self.transmission();
        let idler = generated * eff + self.dark_rate;
        let signal = generated * eff * signal_arrival + self.dark_rate;
        let coincidences = generated * eff * eff * signal_arrival;
        PairRates {
            idler,
            signal,
            coincidences,
            accidentals: idler * signal * self.coincidence_window,
        }
    }

    /// Pump power that makes the true-coincidence rate equal `rate` at `eta`.
    pub fn calibrate_pump(&mut self, rate: f64, eta: f64) {
        self.pump_power_mw = rate / (self.pair_rate_per_mw * self.transmission() * eta);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRates {
    pub idler: f64,
    pub signal: f64,
    pub coincidences: f64,
    pub accidentals: f64,
}

/// Fiber photodiode with seeded read noise.
#[derive(Debug, Clone)]
pub struct Photodiode {
    rng: ChaCha8Rng,
}

impl Photodiode {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One power sample, W.
    pub fn sample(&mut self, source: &SourceModel, eta: f64) -> f64 {
        let mean = source.expected_power(eta);
        let mut p = mean;
        if source.photodiode_rel_noise > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            p += mean * source.photodiode_rel_noise * z;
        }
        if source.photodiode_floor_w > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            p += source.photodiode_floor_w * z;
        }
        p
    }

    /// Sample normalized back to a coupling-efficiency reading.
    pub fn sample_efficiency(&mut self, source: &SourceModel, eta: f64) -> f64 {
        let full = source.laser_power_w * source.transmission();
        if full == 0.0 {
            return 0.0;
        }
        self.sample(source, eta) / full
    }
}

pub fn photodiode_power(source: &SourceModel, eta: f64, noise_seed: u64) -> f64 {
    Photodiode::new(noise_seed).sample(source, eta)
}

/// Counts accumulated over one dwell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub dwell: f64,
    pub signal_singles: u64,
    pub idler_singles: u64,
    pub coincidences: u64,
    /// Singles product times the coincidence window, counts per dwell.
    pub accidentals_estimate: f64,
}

/// Seeded photon counter.
#[derive(Debug, Clone)]
pub struct PhotonCounter {
    rng: ChaCha8Rng,
}

impl PhotonCounter {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        Poisson::new(mean).map_or(0, |d| d.sample(&mut self.rng) as u64)
    }

    /// Counts for one dwell at mean efficiency `eta` and brightness factor
    /// `brightness` (1 = nominal).
    pub fn count(&mut self, source: &SourceModel, eta: f64, brightness: f64, dwell: f64) -> CountRecord {
        let eff = source.detector_efficiency;
        let generated = brightness.max(0.0) * source.pump_power_mw * source.pair_rate_per_mw / (eff * eff);
        let arrival = eta.clamp(0.0, 1.0) * source.transmission();

        // Pairs with both photons detected, then the photons detected alone.
        let true_pairs = self.poisson(generated * eff * eff * arrival * dwell);
        let idler_only = self.poisson(generated * eff * (1.0 - eff * arrival) * dwell);
        let signal_only = self.poisson(generated * eff * arrival * (1.0 - eff) * dwell);
        let idler_dark = self.poisson(source.dark_rate * dwell);
        let signal_dark = self.poisson(source.dark_rate * dwell);
        let idler = true_pairs + idler_only + idler_dark;
        let signal = true_pairs + signal_only + signal_dark;

        let accidental_mean = (idler as f64 / dwell) * (signal as f64 / dwell) * source.coincidence_window * dwell;
        // An accidental pairs two otherwise unmatched detections.
        let accidental = self
            .poisson(accidental_mean)
            .min(idler - true_pairs)
            .min(signal - true_pairs);

        CountRecord {
            dwell,
            signal_singles: signal,
            idler_singles: idler,
            coincidences: true_pairs + accidental,
            accidentals_estimate: accidental_mean,
        }
    }
}

pub fn pair_counts(source: &SourceModel, eta: f64, dwell: f64, seed: u64) -> Result<CountRecord> {
    if source.kind != SourceKind::Spdc {
        return Err(Error::Validation("pair counting needs an spdc source".into()));
    }
    if !(dwell > 0.0) {
        return Err(Error::Validation(format!("dwell must be positive, got {dwell}")));
    }
    Ok(PhotonCounter::new(seed).count(source, eta, 1.0, dwell))
}

/// Coincidence-to-accidental form of the correlation peak:
/// `1 + (C - A) / A`.
pub fn g2_peak(rec: &CountRecord) -> Result<f64> {
    if !(rec.accidentals_estimate > 0.0) {
        return Err(Error::UndefinedStatistic(
            "no accidental coincidences expected (zero singles or zero window)".into(),
        ));
    }
    let c = rec.coincidences as f64;
    Ok(1.0 + (c - rec.accidentals_estimate) / rec.accidentals_estimate)
}

/// Height of the correlation peak above its accidental floor, counts per
/// dwell. Scales with the transmitted pair rate; this is what the g2
/// alignment objective maximizes.
pub fn g2_peak_excess(rec: &CountRecord) -> f64 {
    rec.coincidences as f64 - rec.accidentals_estimate
}

/// Slow multiplicative brightness drift of the pair source: a seeded
/// Ornstein-Uhlenbeck process around 1.
#[derive(Debug, Clone)]
pub struct BrightnessDrift {
    rel_rms: f64,
    corr_time: f64,
    state: f64,
    rng: ChaCha8Rng,
}

impl BrightnessDrift {
    pub fn new(rel_rms: f64, corr_time: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = if rel_rms > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            rel_rms * z
        } else {
            0.0
        };
        Self {
            rel_rms,
            corr_time,
            state,
            rng,
        }
    }

    /// Advances by `dt` and returns the brightness factor.
    pub fn advance(&mut self, dt: f64) -> f64 {
        if self.rel_rms > 0.0 {
            let rho = (-dt / self.corr_time).exp();
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.state = rho * self.state + self.rel_rms * (1.0 - rho * rho).sqrt() * z;
        }
        (1.0 + self.state).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quiet_laser() -> SourceModel {
        SourceModel {
            photodiode_rel_noise: 0.0,
            photodiode_floor_w: 0.0,
            ..SourceModel::laser()
        }
    }

    #[test]
    fn photodiode_mean_power() {
        let s = quiet_laser();
        assert_eq!(photodiode_power(&s, 0.0, 1), 0.0);
        assert_relative_eq!(photodiode_power(&s, 0.898, 1), 0.754e-3, max_relative = 1e-3);
        assert_eq!(photodiode_power(&s, 0.5, 1), 1e-3 * 0.84 * 0.5);
    }

    #[test]
    fn photodiode_noise_floor_at_zero_coupling() {
        let s = SourceModel::laser();
        let mut pd = Photodiode::new(4);
        let samples: Vec<f64> = (0..1000).map(|_| pd.sample(&s, 0.0)).collect();
        let rms = crate::turbulence::rms(&samples);
        assert!(rms > 0.5e-9 && rms < 2e-9, "rms {rms}");
        assert_eq!(photodiode_power(&s, 0.3, 77), photodiode_power(&s, 0.3, 77));
    }

    #[test]
    fn zero_coupling_leaves_only_accidentals() {
        let s = SourceModel::spdc();
        let rec = pair_counts(&s, 0.0, 100.0, 3).unwrap();
        let r = s.expected_rates(0.0, 1.0);
        assert_eq!(r.coincidences, 0.0);
        // Expected accidentals over the dwell are far below one count.
        assert!(rec.coincidences as f64 <= rec.accidentals_estimate + 3.0);
        assert!(rec.signal_singles > 0);
    }

    #[test]
    fn counts_are_poissonian() {
        let s = SourceModel::spdc();
        let mut counter = PhotonCounter::new(21);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| counter.count(&s, 0.5, 1.0, 0.05).coincidences as f64).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1) as f64;
        assert_relative_eq!(var / mean, 1.0, max_relative = 0.05);
        let expected = s.expected_true_coincidence_rate(0.5) * 0.05;
        assert_relative_eq!(mean, expected, max_relative = 0.02);
    }

    #[test]
    fn coincidences_never_exceed_singles() {
        let mut s = SourceModel::spdc();
        s.detector_efficiency = 1.0;
        s.dark_rate = 0.0;
        let mut counter = PhotonCounter::new(8);
        for i in 0..200 {
            let rec = counter.count(&s, (i % 10) as f64 / 10.0, 1.0, 0.01);
            assert!(rec.coincidences <= rec.signal_singles.min(rec.idler_singles));
        }
    }

    #[test]
    fn calibrated_pump_hits_target_rate() {
        let mut s = SourceModel::spdc();
        s.calibrate_pump(5834.0, 0.8);
        assert_relative_eq!(s.expected_true_coincidence_rate(0.8), 5834.0, max_relative = 1e-12);
    }

    #[test]
    fn g2_definition() {
        let rec = |c: u64, a: f64| CountRecord {
            dwell: 1.0,
            signal_singles: 1000,
            idler_singles: 1000,
            coincidences: c,
            accidentals_estimate: a,
        };
        assert_relative_eq!(g2_peak(&rec(5, 5.0)).unwrap(), 1.0);
        assert_relative_eq!(g2_peak(&rec(55, 5.0)).unwrap(), 11.0);
        assert!(matches!(g2_peak(&rec(3, 0.0)), Err(Error::UndefinedStatistic(_))));
        assert_eq!(g2_peak_excess(&rec(55, 5.0)), 50.0);
    }

    #[test]
    fn g2_rises_with_coupling() {
        let s = SourceModel::spdc();
        let ramp = [0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 0.9];
        // Expected value is strictly increasing.
        let expected: Vec<f64> = ramp
            .iter()
            .map(|&eta| {
                let r = s.expected_rates(eta, 1.0);
                (r.coincidences + r.accidentals) / r.accidentals
            })
            .collect();
        assert!(expected.windows(2).all(|w| w[1] > w[0]));
        // And a fixed seed ladder of long dwells follows it.
        let sampled: Vec<f64> = ramp
            .iter()
            .enumerate()
            .map(|(i, &eta)| g2_peak(&pair_counts(&s, eta, 200.0, 100 + i as u64).unwrap()).unwrap())
            .collect();
        assert!(sampled.windows(2).all(|w| w[1] > w[0]), "{sampled:?}");
    }

    #[test]
    fn laser_source_cannot_count_pairs() {
        assert!(pair_counts(&SourceModel::laser(), 0.5, 1.0, 1).is_err());
        assert!(pair_counts(&SourceModel::spdc(), 0.5, 0.0, 1).is_err());
    }

    #[test]
    fn brightness_drift_statistics() {
        let mut d = BrightnessDrift::new(0.05, 10.0, 2);
        let xs: Vec<f64> = (0..20_000).map(|_| d.advance(1.0) - 1.0).collect();
        let rms = crate::turbulence::rms(&xs);
        assert_relative_eq!(rms, 0.05, max_relative = 0.15);
        let mut flat = BrightnessDrift::new(0.0, 10.0, 2);
        assert_eq!(flat.advance(1.0), 1.0);
    }

    #[test]
    fn validation() {
        assert!(SourceModel::laser().validate().is_ok());
        let mut s = SourceModel::spdc();
        s.channel_loss = 1.5;
        assert!(s.validate().is_err());
        let mut s = SourceModel::spdc();
        s.detector_efficiency = 0.0;
        assert!(s.validate().is_err());
    }
}
