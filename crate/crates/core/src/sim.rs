//! Scenario engine.
//!
//! One tick of the loop clock: sample the wander, trace the beam, read the
//! PSDs, step the controller (when enabled) and feed the metric. The mirror
//! state computed on a tick acts from the next tick on, which gives the
//! loop its one-sample transport delay.
//!
//! A run first auto-couples against the static misalignment, takes the PSD
//! references at the coupled state, then runs the stabilized or frozen-mirror
//! phase under wander.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autocouple::{auto_couple, AutoCoupleConfig, ObjectiveKind, SearchOutcome, SimulatedObjective};
use crate::control::{LoopConfig, References, Stabilizer, TelemetryRow};
use crate::detect::{BrightnessDrift, Photodiode, PhotonCounter, SourceKind, SourceModel};
use crate::optics::{
    aligning_mirrors, coupling_efficiency, psd_readings, trace_incidence, Disturbance, MirrorLimits, MirrorState,
    OpticalLayout, PsdNoise, DEFAULT_PSD_NOISE,
};
use crate::turbulence::{synthesize, BuiltinProfile, SpectrumProfile};
use crate::{Error, Result};

/// Fraction of metric samples dropped from the start of the analysis window.
pub const SETTLE_FRACTION: f64 = 0.05;

/// Coincidence rate the stabilized pair-source run is calibrated to, cps.
pub const STABILIZED_COUNT_RATE: f64 = 5834.0;

/// PSD samples averaged to form the loop references.
const REFERENCE_SAMPLES: usize = 1000;

/// An additive wander source with a spectral profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WanderSource {
    pub enabled: bool,
    /// Builtin profile name, or a label for `custom`.
    pub profile: String,
    /// Amplitude factor applied after synthesis.
    pub scale: f64,
    #[serde(skip)]
    pub custom: Option<SpectrumProfile>,
}

impl WanderSource {
    pub fn builtin(profile: BuiltinProfile, scale: f64) -> Self {
        Self {
            enabled: true,
            profile: profile.name().to_string(),
            scale,
            custom: None,
        }
    }

    pub fn off() -> Self {
        Self {
            enabled: false,
            profile: BuiltinProfile::Indoor60m.name().to_string(),
            scale: 0.0,
            custom: None,
        }
    }

    pub fn resolve(&self) -> Result<SpectrumProfile> {
        match &self.custom {
            Some(p) => Ok(p.clone()),
            None => BuiltinProfile::parse(&self.profile).map(BuiltinProfile::profile),
        }
    }
}

/// Independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub turbulence: u64,
    pub platform: u64,
    pub noise: u64,
    pub metric: u64,
    pub search: u64,
}

impl Seeds {
    /// Expands one master seed into per-stream seeds.
    pub fn from_master(master: u64) -> Self {
        // SplitMix64 increments give well separated streams.
        let mix = |k: u64| {
            let mut z = master.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        Self {
            turbulence: mix(1),
            platform: mix(2),
            noise: mix(3),
            metric: mix(4),
            search: mix(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub layout: OpticalLayout,
    pub limits: MirrorLimits,
    /// Static misalignment the auto-coupling has to find.
    pub misalignment: Disturbance,
    pub turbulence: WanderSource,
    /// Residual vibration and air movement of the bench.
    pub platform: WanderSource,
    /// PSD read noise per axis, m.
    pub psd_noise: f64,
    pub source: SourceModel,
    pub controller: LoopConfig,
    pub autocouple_enabled: bool,
    pub autocouple: AutoCoupleConfig,
    /// Duration of the wander phase, s.
    pub duration: f64,
    /// Metric sampling rate, Hz. Photodiode samples or counting dwells.
    pub metric_rate: f64,
    /// For pair sources: stabilized coincidence rate to calibrate the pump
    /// to, cps. `None` keeps the configured pump power.
    pub target_count_rate: Option<f64>,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Fig6a,
    Fig6b,
    Fig7a,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Self::Fig6a, Self::Fig6b, Self::Fig7a];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fig6a => "fig6a",
            Self::Fig6b => "fig6b",
            Self::Fig7a => "fig7a",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Lookup(name.to_string()))
    }
}

/// Amplitude of the 2.6 km wander relative to the builtin profile.
pub const TURBULENCE_SCALE: f64 = 0.35;
/// Amplitude of bench wander relative to the indoor profile.
pub const PLATFORM_SCALE: f64 = 3.6;
/// Slow pump-brightness fluctuation of the pair source.
pub const PAIR_BRIGHTNESS_RMS: f64 = 0.03;
pub const PAIR_BRIGHTNESS_CORR_S: f64 = 5.0;

pub fn preset(name: &str) -> Result<Scenario> {
    Preset::parse(name).map(Scenario::preset)
}

impl Scenario {
    pub fn preset(p: Preset) -> Self {
        let base = Scenario {
            name: p.name().to_string(),
            layout: OpticalLayout::default(),
            limits: MirrorLimits::default(),
            misalignment: Disturbance::tilt(-4e-3, 6e-3),
            turbulence: WanderSource::builtin(BuiltinProfile::Outdoor2_6km, TURBULENCE_SCALE),
            platform: WanderSource::builtin(BuiltinProfile::Indoor60m, PLATFORM_SCALE),
            psd_noise: DEFAULT_PSD_NOISE,
            source: SourceModel::laser(),
            controller: LoopConfig::default(),
            autocouple_enabled: true,
            autocouple: AutoCoupleConfig::default(),
            duration: 60.0,
            metric_rate: 10_000.0,
            target_count_rate: None,
            seeds: Seeds::from_master(0),
        };
        match p {
            Preset::Fig6a => Scenario {
                turbulence: WanderSource::off(),
                ..base
            },
            Preset::Fig6b => base,
            Preset::Fig7a => {
                let mut source = SourceModel::spdc();
                source.brightness_rel_rms = PAIR_BRIGHTNESS_RMS;
                source.brightness_corr_time = PAIR_BRIGHTNESS_CORR_S;
                Scenario {
                    source,
                    duration: 600.0,
                    metric_rate: 1.0,
                    target_count_rate: Some(STABILIZED_COUNT_RATE),
                    ..base
                }
            }
        }
    }

    pub fn with_seed(mut self, master: u64) -> Self {
        self.seeds = Seeds::from_master(master);
        self
    }

    pub fn with_controller(mut self, enabled: bool) -> Self {
        self.controller.enabled = enabled;
        self
    }

    pub fn metric_kind(&self) -> MetricKind {
        match self.source.kind {
            SourceKind::Laser => MetricKind::Efficiency,
            SourceKind::Spdc => MetricKind::Coincidences,
        }
    }

    /// Loop ticks per metric sample.
    pub fn ticks_per_metric(&self) -> usize {
        (self.controller.rate / self.metric_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate().map_err(|e| Error::Validation(e.to_string()))?;
        self.source.validate()?;
        self.controller.validate()?;
        self.autocouple.validate()?;
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Validation(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.metric_rate.is_finite() && self.metric_rate > 0.0) {
            return Err(Error::Validation("metric rate must be positive".into()));
        }
        if self.metric_rate > self.controller.rate {
            return Err(Error::Validation(format!(
                "metric rate {} Hz exceeds loop rate {} Hz",
                self.metric_rate, self.controller.rate
            )));
        }
        let ratio = self.controller.rate / self.metric_rate;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Error::Validation("loop rate must be a whole multiple of the metric rate".into()));
        }
        if ((self.duration * self.metric_rate).floor() as usize) < 2 {
            return Err(Error::Validation("duration covers fewer than two metric samples".into()));
        }
        if !(self.psd_noise.is_finite() && self.psd_noise >= 0.0) {
            return Err(Error::Validation("psd noise must be non-negative".into()));
        }
        if !self.misalignment.is_finite() {
            return Err(Error::Validation("misalignment must be finite".into()));
        }
        for (name, w) in [("turbulence", &self.turbulence), ("platform", &self.platform)] {
            if w.enabled {
                if !(w.scale.is_finite() && w.scale >= 0.0) {
                    return Err(Error::Validation(format!("{name} scale must be non-negative")));
                }
                w.resolve().map_err(|e| Error::Validation(format!("{name}: {e}")))?;
            }
        }
        if let Some(rate) = self.target_count_rate {
            if self.source.kind != SourceKind::Spdc || !(rate > 0.0) {
                return Err(Error::Validation("target count rate needs a pair source and a positive rate".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Photodiode power normalized to the full channel power.
    Efficiency,
    /// Coincidences per dwell.
    Coincidences,
}

impl MetricKind {
    pub fn column(self) -> &'static str {
        match self {
            Self::Efficiency => "efficiency",
            Self::Coincidences => "coincidences",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AutocoupleSummary {
    pub evaluations: usize,
    pub final_state: MirrorState,
    pub final_score: f64,
    /// Coupling efficiency at the coupled state without wander.
    pub efficiency: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: Scenario,
    pub metric: MetricKind,
    pub controller_enabled: bool,
    /// Mean and standard deviation over the analysis window.
    pub mean: f64,
    pub std: f64,
    /// Mean coupling efficiency over the analysis window.
    pub mean_efficiency: f64,
    /// First metric sample of the analysis window.
    pub analysis_start: usize,
    pub analysis_len: usize,
    /// Simulated time at which auto-coupling ended, s.
    pub autocouple_end: f64,
    /// Simulated time at which the wander phase began, s.
    pub stabilization_start: f64,
    pub autocouple: Option<AutocoupleSummary>,
    pub references: References,
    /// Calibrated pump power for pair sources, mW.
    pub pump_power_mw: f64,
    pub saturated_ticks: usize,
    pub fault_ticks: usize,
    pub turbulence_clipped: usize,
    #[serde(skip)]
    pub times: Vec<f64>,
    #[serde(skip)]
    pub values: Vec<f64>,
    /// Mean coupling efficiency behind each metric sample.
    #[serde(skip)]
    pub efficiency: Vec<f64>,
}

impl RunSummary {
    /// Rows `time_s, <metric>, mean_efficiency`.
    pub fn write_series_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        crate::csv::write_table(
            out,
            &[
                format!("scenario {}, controller {}", self.scenario.name, on_off(self.controller_enabled)),
                format!("metric {}, rate_hz {}", self.metric.column(), self.scenario.metric_rate),
            ],
            &["time_s", self.metric.column(), "mean_efficiency"],
            (0..self.times.len()).map(|i| vec![self.times[i], self.values[i], self.efficiency[i]]),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Wander samples at the loop rate, rad per axis.
struct Wander {
    x: Vec<f64>,
    y: Vec<f64>,
    clipped: usize,
}

fn wander(scn: &Scenario, ticks: usize) -> Result<Wander> {
    let mut x = vec![0.0; ticks];
    let mut y = vec![0.0; ticks];
    let mut clipped = 0;
    let sources = [(&scn.turbulence, scn.seeds.turbulence), (&scn.platform, scn.seeds.platform)];
    for (src, seed) in sources {
        if !src.enabled || src.scale == 0.0 {
            continue;
        }
        let profile = src.resolve()?;
        let series = synthesize(&profile, ticks as f64 / scn.controller.rate, scn.controller.rate, seed)
            .map_err(|e| Error::Validation(format!("{}: {e}", src.profile)))?;
        clipped += series.clipped;
        for i in 0..ticks.min(series.len()) {
            x[i] += src.scale * series.x[i];
            y[i] += src.scale * series.y[i];
        }
    }
    Ok(Wander { x, y, clipped })
}

/// Runs a scenario.
pub fn run(scn: &Scenario) -> Result<RunSummary> {
    run_inner(scn, None).map(|r| r.0)
}

/// Runs a scenario and keeps every `stride`-th loop update.
pub fn run_with_telemetry(scn: &Scenario, stride: usize) -> Result<(RunSummary, Vec<TelemetryRow>)> {
    if stride == 0 {
        return Err(Error::Validation("telemetry stride must be at least 1".into()));
    }
    run_inner(scn, Some(stride))
}

fn run_inner(scn: &Scenario, telemetry_stride: Option<usize>) -> Result<(RunSummary, Vec<TelemetryRow>)> {
    scn.validate()?;
    let layout = scn.layout;
    let mut source = scn.source;

    let (coupled, autocouple, autocouple_end) = if scn.autocouple_enabled {
        let out = couple(scn, &source, None)?;
        let eta = coupling_efficiency(&layout, &trace_incidence(&layout, &out.final_state, &scn.misalignment));
        let summary = AutocoupleSummary {
            evaluations: out.evaluations,
            final_state: out.final_state,
            final_score: out.final_score,
            efficiency: eta,
        };
        (out.final_state, Some(summary), out.elapsed)
    } else {
        (aligning_mirrors(&layout, &scn.misalignment, scn.limits), None, 0.0)
    };

    let coupled_eta = coupling_efficiency(&layout, &trace_incidence(&layout, &coupled, &scn.misalignment));
    if let Some(rate) = scn.target_count_rate {
        if coupled_eta <= 0.0 {
            return Err(Error::Validation("coupled state transmits nothing; cannot calibrate".into()));
        }
        source.calibrate_pump(rate, coupled_eta);
    }

    let mut noise = PsdNoise::new(scn.psd_noise, scn.seeds.noise);
    let readings: Vec<_> = (0..REFERENCE_SAMPLES)
        .map(|_| psd_readings(&layout, &coupled, &scn.misalignment, &mut noise))
        .collect();
    let references = References::mean(&readings);
    let mut stab = Stabilizer::new(scn.controller, &layout, references, coupled)?;

    let per_metric = scn.ticks_per_metric();
    let n_metric = (scn.duration * scn.metric_rate).floor() as usize;
    let ticks = n_metric * per_metric;
    let w = wander(scn, ticks)?;

    let metric = scn.metric_kind();
    let dwell = 1.0 / scn.metric_rate;
    let mut photodiode = Photodiode::new(scn.seeds.metric);
    let mut counter = PhotonCounter::new(scn.seeds.metric);
    let mut brightness = BrightnessDrift::new(source.brightness_rel_rms, source.brightness_corr_time, scn.seeds.metric ^ 0x5DEE_CE66);

    let mut mirrors = coupled;
    let mut times = Vec::with_capacity(n_metric);
    let mut values = Vec::with_capacity(n_metric);
    let mut efficiency = Vec::with_capacity(n_metric);
    let mut eta_acc = 0.0;
    let (mut saturated_ticks, mut fault_ticks) = (0, 0);
    let mut telemetry = Vec::new();
    for t in 0..ticks {
        let dist = scn.misalignment + Disturbance::tilt(w.x[t], w.y[t]);
        let eta = coupling_efficiency(&layout, &trace_incidence(&layout, &mirrors, &dist));
        let psd = psd_readings(&layout, &mirrors, &dist, &mut noise);
        let report = stab.step(&psd);
        saturated_ticks += report.saturated as usize;
        fault_ticks += report.fault as usize;
        if telemetry_stride.is_some_and(|k| t % k == 0) {
            telemetry.push(TelemetryRow::new(autocouple_end + t as f64 / scn.controller.rate, &report));
        }
        eta_acc += eta;
        if (t + 1) % per_metric == 0 {
            let eta_mean = eta_acc / per_metric as f64;
            eta_acc = 0.0;
            let value = match metric {
                MetricKind::Efficiency => photodiode.sample_efficiency(&source, eta_mean),
                MetricKind::Coincidences => {
                    let b = brightness.advance(dwell);
                    counter.count(&source, eta_mean, b, dwell).coincidences as f64
                }
            };
            times.push(autocouple_end + (t + 1) as f64 / scn.controller.rate);
            values.push(value);
            efficiency.push(eta_mean);
        }
        mirrors = report.mirrors;
    }

    let analysis_start = (SETTLE_FRACTION * n_metric as f64).ceil() as usize;
    let (mean, std) = mean_std(&values[analysis_start..]);
    let (mean_efficiency, _) = mean_std(&efficiency[analysis_start..]);
    let summary = RunSummary {
        scenario: scn.clone(),
        metric,
        controller_enabled: scn.controller.enabled,
        mean,
        std,
        mean_efficiency,
        analysis_start,
        analysis_len: n_metric - analysis_start,
        autocouple_end,
        stabilization_start: autocouple_end,
        autocouple,
        references,
        pump_power_mw: source.pump_power_mw,
        saturated_ticks,
        fault_ticks,
        turbulence_clipped: w.clipped,
        times,
        values,
        efficiency,
    };
    Ok((summary, telemetry))
}

/// Auto-couples against the static misalignment. The objective follows the
/// source unless `objective` overrides it; a coincidence objective on a laser
/// scenario counts with the configured pair-source parameters.
pub fn couple(scn: &Scenario, source: &SourceModel, objective: Option<ObjectiveKind>) -> Result<SearchOutcome> {
    let cfg = AutoCoupleConfig {
        limits: scn.limits,
        random: crate::autocouple::RandomSearchConfig {
            seed: scn.seeds.search,
            ..scn.autocouple.random
        },
        ..scn.autocouple
    };
    let kind = objective.unwrap_or(match source.kind {
        SourceKind::Laser => ObjectiveKind::Power,
        SourceKind::Spdc => ObjectiveKind::G2Peak,
    });
    let mut obj = match kind {
        ObjectiveKind::Power => SimulatedObjective::power(scn.layout, scn.misalignment),
        ObjectiveKind::G2Peak => {
            let mut s = SourceModel {
                kind: SourceKind::Spdc,
                ..*source
            };
            s.calibrate_pump(scn.target_count_rate.unwrap_or(STABILIZED_COUNT_RATE), scn.layout.peak_efficiency());
            // One counting dwell per evaluation, at least a second.
            let dwell = (1.0 / scn.metric_rate).max(1.0);
            SimulatedObjective::g2(scn.layout, scn.misalignment, s, dwell, scn.seeds.search)
        }
    };
    auto_couple(&mut obj, &cfg)
}

/// Improvement of a stabilized run over its frozen-mirror baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub mean_off: f64,
    pub mean_on: f64,
    pub std_off: f64,
    pub std_on: f64,
    /// `mean_on / mean_off`.
    pub mean_ratio: f64,
    /// `std_off / std_on`; larger is better.
    pub std_ratio: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == den {
        1.0
    } else {
        num / den
    }
}

pub fn compare(off: &RunSummary, on: &RunSummary) -> Result<Improvement> {
    if off.metric != on.metric {
        return Err(Error::Comparison("runs use different metrics".into()));
    }
    if off.analysis_start != on.analysis_start || off.analysis_len != on.analysis_len {
        return Err(Error::Comparison(format!(
            "analysis windows differ: [{}, +{}] vs [{}, +{}]",
            off.analysis_start, off.analysis_len, on.analysis_start, on.analysis_len
        )));
    }
    let t = |s: &RunSummary| s.times.get(s.analysis_start).copied();
    if t(off) != t(on) {
        return Err(Error::Comparison("analysis windows start at different times".into()));
    }
    Ok(Improvement {
        mean_off: off.mean,
        mean_on: on.mean,
        std_off: off.std,
        std_on: on.std,
        mean_ratio: ratio(on.mean, off.mean),
        std_ratio: ratio(off.std, on.std),
    })
}

/// Runs the scenario with the controller off and on, on matched seeds.
pub fn run_pair(scn: &Scenario) -> Result<(RunSummary, RunSummary, Improvement)> {
    let off = run(&scn.clone().with_controller(false))?;
    let on = run(&scn.clone().with_controller(true))?;
    let imp = compare(&off, &on)?;
    Ok((off, on, imp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(p: Preset) -> Scenario {
        let mut s = Scenario::preset(p);
        s.duration = if p == Preset::Fig7a { 20.0 } else { 5.0 };
        s
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(Preset::parse(p.name()).unwrap(), p);
            Scenario::preset(p).validate().unwrap();
        }
        assert!(matches!(preset("fig9"), Err(Error::Lookup(_))));
        assert!(!Scenario::preset(Preset::Fig6a).turbulence.enabled);
        assert_eq!(Scenario::preset(Preset::Fig7a).metric_kind(), MetricKind::Coincidences);
        assert_eq!(Scenario::preset(Preset::Fig6b).metric_kind(), MetricKind::Efficiency);
    }

    #[test]
    fn static_system_holds_peak_efficiency() {
        let mut s = quick(Preset::Fig6a);
        s.platform = WanderSource::off();
        s.autocouple_enabled = false;
        s.controller.enabled = false;
        s.duration = 1.0;
        let r = run(&s).unwrap();
        let peak = s.layout.peak_efficiency();
        assert!((r.mean - peak).abs() < 1e-3);
        assert!(r.std < 0.01 * peak);
        assert!(r.efficiency.iter().all(|&e| (e - peak).abs() < 1e-9));
    }

    #[test]
    fn runs_are_deterministic() {
        let s = quick(Preset::Fig6b).with_seed(11);
        let a = run(&s).unwrap();
        let b = run(&s).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.to_json(), b.to_json());
        let c = run(&s.clone().with_seed(12)).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn analysis_window_skips_settling() {
        let r = run(&quick(Preset::Fig6a)).unwrap();
        assert_eq!(r.times.len(), 50_000);
        assert_eq!(r.analysis_start, 2500);
        assert_eq!(r.analysis_len, 47_500);
        assert!(r.stabilization_start >= r.autocouple_end);
        assert!(r.autocouple.unwrap().efficiency > 0.99 * r.scenario.layout.peak_efficiency());
    }

    #[test]
    fn compare_identity_and_mismatch() {
        let r = run(&quick(Preset::Fig6a)).unwrap();
        let imp = compare(&r, &r).unwrap();
        assert_eq!((imp.mean_ratio, imp.std_ratio), (1.0, 1.0));
        let mut short = quick(Preset::Fig6a);
        short.duration = 4.5;
        let s = run(&short).unwrap();
        assert!(matches!(compare(&r, &s), Err(Error::Comparison(_))));
    }

    #[test]
    fn stabilization_helps_on_short_runs() {
        for p in [Preset::Fig6a, Preset::Fig6b] {
            let (_, _, imp) = run_pair(&quick(p)).unwrap();
            assert!(imp.std_ratio > 1.0, "{p:?}: {imp:?}");
            assert!(imp.mean_ratio > 1.0, "{p:?}: {imp:?}");
        }
    }

    #[test]
    fn invalid_scenarios_fail_before_stepping() {
        let mut s = quick(Preset::Fig6b);
        s.metric_rate = 20_000.0;
        assert!(matches!(run(&s), Err(Error::Validation(_))));
        let mut s = quick(Preset::Fig6b);
        s.duration = 0.0;
        assert!(matches!(run(&s), Err(Error::Validation(_))));
        let mut s = quick(Preset::Fig6b);
        s.turbulence.profile = "nowhere".into();
        assert!(matches!(run(&s), Err(Error::Validation(_))));
    }

    #[test]
    fn pair_source_calibrates_to_count_scale() {
        let r = run(&quick(Preset::Fig7a)).unwrap();
        assert_eq!(r.values.len(), 20);
        assert!(r.values.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!((r.mean - STABILIZED_COUNT_RATE).abs() < 0.2 * STABILIZED_COUNT_RATE, "{}", r.mean);
    }

    #[test]
    fn series_csv_round_trips() {
        let mut s = quick(Preset::Fig6a);
        s.metric_rate = 100.0;
        let r = run(&s).unwrap();
        let mut buf = Vec::new();
        r.write_series_csv(&mut buf).unwrap();
        let rows = crate::csv::read_table(buf.as_slice(), 3).unwrap();
        assert_eq!(rows.len(), r.times.len());
        assert_eq!(rows[3][1], r.values[3]);
    }
}
