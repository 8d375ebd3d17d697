//! Three-stage automatic fiber coupling.
//!
//! 1. Random search over `(alpha1, beta1)` with the second mirror at rest,
//!    until the objective clears a threshold.
//! 2. Angle search: a 1-D sweep of `alpha1`, then of `beta1`, around the
//!    random-search hit, keeping the running maximum.
//! 3. Position search: both mirrors move together so the beam angle stays
//!    locked while its position rasters the collimator. The raster is
//!    Gaussian smoothed and the mirrors go to the smoothed maximum.
//!
//! The search works in angle units; the objective is any scalar that peaks
//! at good coupling (photodiode power or the coincidence peak).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detect::{g2_peak_excess, PhotonCounter, SourceModel};
use crate::optics::{coupling_efficiency, trace_incidence, Disturbance, MirrorAxis, MirrorLimits, MirrorState, OpticalLayout};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Power,
    G2Peak,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Power => "power",
            Self::G2Peak => "g2_peak",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub score: f64,
    pub valid: bool,
}

impl Evaluation {
    pub fn valid(score: f64) -> Self {
        Self { score, valid: true }
    }

    pub fn invalid() -> Self {
        Self {
            score: f64::NAN,
            valid: false,
        }
    }

    /// Score used for ranking; invalid points never win.
    fn rank(&self) -> f64 {
        if self.valid && self.score.is_finite() {
            self.score
        } else {
            f64::NEG_INFINITY
        }
    }
}

pub trait Objective {
    fn kind(&self) -> ObjectiveKind;

    /// Commands the mirrors to `state` and measures.
    fn evaluate(&mut self, state: &MirrorState) -> Evaluation;

    /// Expected score at perfect coupling; thresholds are fractions of it.
    fn nominal_peak(&self) -> f64;

    /// Wall time of one evaluation, s.
    fn eval_time(&self) -> f64 {
        0.0
    }
}

/// Objective backed by a closure.
pub struct FnObjective<F> {
    kind: ObjectiveKind,
    peak: f64,
    f: F,
}

impl<F: FnMut(&MirrorState) -> f64> FnObjective<F> {
    pub fn new(kind: ObjectiveKind, nominal_peak: f64, f: F) -> Self {
        Self {
            kind,
            peak: nominal_peak,
            f,
        }
    }
}

impl<F: FnMut(&MirrorState) -> f64> Objective for FnObjective<F> {
    fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    fn evaluate(&mut self, state: &MirrorState) -> Evaluation {
        let s = (self.f)(state);
        if s.is_finite() {
            Evaluation::valid(s)
        } else {
            Evaluation::invalid()
        }
    }

    fn nominal_peak(&self) -> f64 {
        self.peak
    }
}

/// Objective computed from the optical model under a static disturbance.
#[derive(Debug, Clone)]
pub struct SimulatedObjective {
    pub layout: OpticalLayout,
    pub disturbance: Disturbance,
    kind: ObjectiveKind,
    source: SourceModel,
    /// Additive Gaussian noise on the power score, fraction of the peak.
    noise_rel: f64,
    dwell: f64,
    settle_time: f64,
    rng: ChaCha8Rng,
    counter: PhotonCounter,
}

impl SimulatedObjective {
    /// Noiseless coupling efficiency.
    pub fn power(layout: OpticalLayout, disturbance: Disturbance) -> Self {
        Self {
            layout,
            disturbance,
            kind: ObjectiveKind::Power,
            source: SourceModel::laser(),
            noise_rel: 0.0,
            dwell: 0.0,
            settle_time: 1e-3,
            rng: ChaCha8Rng::seed_from_u64(0),
            counter: PhotonCounter::new(0),
        }
    }

    /// Coincidence-peak height over `dwell` seconds of counting.
    pub fn g2(layout: OpticalLayout, disturbance: Disturbance, source: SourceModel, dwell: f64, seed: u64) -> Self {
        Self {
            layout,
            disturbance,
            kind: ObjectiveKind::G2Peak,
            source,
            noise_rel: 0.0,
            dwell,
            settle_time: 1e-3,
            rng: ChaCha8Rng::seed_from_u64(seed),
            counter: PhotonCounter::new(seed),
        }
    }

    pub fn with_noise(mut self, noise_rel: f64, seed: u64) -> Self {
        self.noise_rel = noise_rel;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn efficiency(&self, state: &MirrorState) -> f64 {
        coupling_efficiency(&self.layout, &trace_incidence(&self.layout, state, &self.disturbance))
    }
}

impl Objective for SimulatedObjective {
    fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    fn evaluate(&mut self, state: &MirrorState) -> Evaluation {
        let eta = self.efficiency(state);
        match self.kind {
            ObjectiveKind::Power => {
                let mut score = eta;
                if self.noise_rel > 0.0 {
                    let z: f64 = self.rng.sample(StandardNormal);
                    score += self.noise_rel * self.nominal_peak() * z;
                }
                Evaluation::valid(score)
            }
            ObjectiveKind::G2Peak => {
                let rec = self.counter.count(&self.source, eta, 1.0, self.dwell);
                Evaluation::valid(g2_peak_excess(&rec))
            }
        }
    }

    fn nominal_peak(&self) -> f64 {
        let peak = self.layout.peak_efficiency();
        match self.kind {
            ObjectiveKind::Power => peak,
            ObjectiveKind::G2Peak => self.source.expected_true_coincidence_rate(peak) * self.dwell,
        }
    }

    fn eval_time(&self) -> f64 {
        self.settle_time + self.dwell
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomSearchConfig {
    /// Sampling range, +/- rad.
    pub range: f64,
    /// Threshold as a fraction of the objective's nominal peak.
    pub threshold_fraction: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RandomSearchConfig {
    fn default() -> Self {
        Self {
            range: 5e-3,
            threshold_fraction: 0.01,
            max_iters: 5000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSearchConfig {
    /// Sweep half width, rad.
    pub half_range: f64,
    /// Sweep step, rad.
    pub step: f64,
    /// Follow each sweep with a log-parabola vertex probe.
    pub refine: bool,
}

impl Default for AngleSearchConfig {
    fn default() -> Self {
        Self {
            half_range: 1.5e-3,
            step: 100e-6,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionSearchConfig {
    /// Raster half width, rad.
    pub range: f64,
    /// Raster step, rad.
    pub step: f64,
    /// Gaussian smoothing width in grid steps; 0 disables smoothing.
    pub smooth_sigma: f64,
}

impl Default for PositionSearchConfig {
    fn default() -> Self {
        Self {
            range: 5e-3,
            step: 0.5e-3,
            smooth_sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoCoupleConfig {
    pub limits: MirrorLimits,
    /// Mirror state before the search, rad.
    pub start: [f64; 4],
    pub random: RandomSearchConfig,
    pub angle: AngleSearchConfig,
    pub position: PositionSearchConfig,
    pub position_stage: bool,
}

impl Default for AutoCoupleConfig {
    fn default() -> Self {
        Self {
            limits: MirrorLimits::default(),
            start: [0.0; 4],
            random: RandomSearchConfig::default(),
            angle: AngleSearchConfig::default(),
            position: PositionSearchConfig::default(),
            position_stage: true,
        }
    }
}

impl AutoCoupleConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} must be positive, got {v}")))
            }
        };
        positive("random range", self.random.range)?;
        positive("angle half range", self.angle.half_range)?;
        positive("angle step", self.angle.step)?;
        positive("position range", self.position.range)?;
        positive("position step", self.position.step)?;
        positive("mirror range", self.limits.range)?;
        positive("mirror resolution", self.limits.resolution)?;
        if !(self.position.smooth_sigma.is_finite() && self.position.smooth_sigma >= 0.0) {
            return Err(Error::Validation("smoothing sigma must be non-negative".into()));
        }
        if !(self.random.threshold_fraction.is_finite() && self.random.threshold_fraction >= 0.0) {
            return Err(Error::Validation("threshold fraction must be non-negative".into()));
        }
        if self.random.max_iters == 0 {
            return Err(Error::Validation("max_iters must be at least 1".into()));
        }
        if self.start.iter().any(|a| !a.is_finite() || a.abs() > self.limits.range) {
            return Err(Error::Validation("start angles must lie inside the mirror range".into()));
        }
        Ok(())
    }

    pub fn start_state(&self) -> MirrorState {
        let [a1, b1, a2, b2] = self.start;
        MirrorState::with_angles(self.limits, a1, b1, a2, b2)
    }
}

/// Result of one search stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageResult {
    pub state: MirrorState,
    pub score: f64,
    pub evaluations: usize,
}

/// Counts evaluations and keeps the best valid state seen.
struct Tracker<'a, O: Objective + ?Sized> {
    obj: &'a mut O,
    evaluations: usize,
    best: Option<(MirrorState, f64)>,
}

impl<'a, O: Objective + ?Sized> Tracker<'a, O> {
    fn new(obj: &'a mut O) -> Self {
        Self {
            obj,
            evaluations: 0,
            best: None,
        }
    }

    fn eval(&mut self, state: &MirrorState) -> Evaluation {
        let e = self.obj.evaluate(state);
        self.evaluations += 1;
        if e.rank() > self.best.map_or(f64::NEG_INFINITY, |b| b.1) {
            self.best = Some((*state, e.score));
        }
        e
    }
}

/// Samples `(alpha1, beta1)` uniformly until the score exceeds `threshold`.
/// The start state is measured first.
pub fn random_search<O: Objective + ?Sized>(
    obj: &mut O,
    start: &MirrorState,
    cfg: &RandomSearchConfig,
    threshold: f64,
) -> Result<StageResult> {
    let mut t = Tracker::new(obj);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = *start;
    loop {
        let e = t.eval(&state);
        if e.rank() > threshold {
            return Ok(StageResult {
                state,
                score: e.score,
                evaluations: t.evaluations,
            });
        }
        if t.evaluations >= cfg.max_iters {
            return Err(Error::NotFound {
                evaluations: t.evaluations,
                threshold,
            });
        }
        state.set(MirrorAxis::Alpha1, rng.random_range(-cfg.range..=cfg.range));
        state.set(MirrorAxis::Beta1, rng.random_range(-cfg.range..=cfg.range));
    }
}

/// One 1-D sweep of `axis` around its current value. Earliest maximum wins.
fn sweep<O: Objective + ?Sized>(t: &mut Tracker<'_, O>, base: MirrorState, axis: MirrorAxis, cfg: &AngleSearchConfig) -> (MirrorState, f64) {
    let n = (cfg.half_range / cfg.step).round() as i64;
    let center = base.get(axis);
    let mut scores = Vec::with_capacity((2 * n + 1) as usize);
    let mut best: Option<(usize, MirrorState, f64)> = None;
    for k in -n..=n {
        let angle = center + k as f64 * cfg.step;
        let mut s = base;
        if !s.in_range(angle) {
            scores.push(f64::NEG_INFINITY);
            continue;
        }
        s.set(axis, angle);
        let e = t.eval(&s);
        scores.push(e.rank());
        if e.rank() > best.map_or(f64::NEG_INFINITY, |b| b.2) {
            best = Some((scores.len() - 1, s, e.score));
        }
    }
    let Some((idx, state, score)) = best else {
        return (base, f64::NEG_INFINITY);
    };
    if !cfg.refine || idx == 0 || idx + 1 == scores.len() {
        return (state, score);
    }
    let Some(offset) = vertex_offset(scores[idx - 1], scores[idx], scores[idx + 1]) else {
        return (state, score);
    };
    let mut probe = state;
    probe.set(axis, state.get(axis) + offset * cfg.step);
    if probe == state {
        return (state, score);
    }
    let e = t.eval(&probe);
    if e.rank() > score {
        (probe, e.score)
    } else {
        (state, score)
    }
}

/// Vertex of the parabola through three equally spaced samples, in units of
/// the spacing, clamped to half a step. Fits the logarithm when all samples
/// are positive, which is exact for a Gaussian peak.
fn vertex_offset(left: f64, mid: f64, right: f64) -> Option<f64> {
    if !(left.is_finite() && mid.is_finite() && right.is_finite()) {
        return None;
    }
    let (l, m, r) = if left > 0.0 && mid > 0.0 && right > 0.0 {
        (left.ln(), mid.ln(), right.ln())
    } else {
        (left, mid, right)
    };
    let curvature = l - 2.0 * m + r;
    if !(curvature < 0.0) {
        return None;
    }
    Some((0.5 * (l - r) / curvature).clamp(-0.5, 0.5))
}

/// Sequential `alpha1` then `beta1` sweeps around `center`.
pub fn angle_search<O: Objective + ?Sized>(obj: &mut O, center: &MirrorState, cfg: &AngleSearchConfig) -> StageResult {
    let mut t = Tracker::new(obj);
    let (after_alpha, _) = sweep(&mut t, *center, MirrorAxis::Alpha1, cfg);
    let (state, score) = sweep(&mut t, after_alpha, MirrorAxis::Beta1, cfg);
    StageResult {
        state,
        score,
        evaluations: t.evaluations,
    }
}

/// Raster of the position search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanMap {
    /// `alpha1` grid, rad.
    pub axis1: Vec<f64>,
    /// `beta1` grid, rad.
    pub axis2: Vec<f64>,
    /// `values[i][j]` at `(axis1[i], axis2[j])`; NaN where the locked second
    /// mirror would leave its range.
    pub values: Vec<Vec<f64>>,
    pub smoothed: Option<Vec<Vec<f64>>>,
    /// Index of the maximum of `smoothed`, or of `values` without smoothing.
    pub argmax: (usize, usize),
    /// Locked angle differences `alpha1 - alpha2`, `beta1 - beta2`, rad.
    pub locks: (f64, f64),
    pub limits: MirrorLimits,
    pub evaluations: usize,
}

impl ScanMap {
    /// Mirror state at a raster point, or `None` if it is outside the range.
    pub fn state_at(&self, i: usize, j: usize) -> Option<MirrorState> {
        locked_state(self.limits, self.axis1[i], self.axis2[j], self.locks)
    }

    pub fn argmax_state(&self) -> MirrorState {
        self.state_at(self.argmax.0, self.argmax.1)
            .expect("argmax is always a valid raster point")
    }

    pub fn argmax_value(&self) -> f64 {
        self.values[self.argmax.0][self.argmax.1]
    }

    pub fn valid_points(&self) -> usize {
        self.values.iter().flatten().filter(|v| !v.is_nan()).count()
    }

    /// Rows `alpha1_rad, beta1_rad, score, smoothed_score` with `alpha1` as
    /// the outer index. Invalid points are written as NaN.
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> std::io::Result<()> {
        let rows = self.axis1.iter().enumerate().flat_map(|(i, &a)| {
            self.axis2.iter().enumerate().map(move |(j, &b)| {
                let smoothed = self.smoothed.as_ref().map_or(self.values[i][j], |s| s[i][j]);
                vec![a, b, self.values[i][j], smoothed]
            })
        });
        crate::csv::write_table(out, comments, &["alpha1_rad", "beta1_rad", "score", "smoothed_score"], rows)
    }
}

fn locked_state(limits: MirrorLimits, a1: f64, b1: f64, locks: (f64, f64)) -> Option<MirrorState> {
    let probe = MirrorState::new(limits);
    let (a2, b2) = (a1 - locks.0, b1 - locks.1);
    if [a1, b1, a2, b2].iter().all(|&v| probe.in_range(v)) {
        Some(MirrorState::with_angles(limits, a1, b1, a2, b2))
    } else {
        None
    }
}

fn grid(range: f64, step: f64) -> Vec<f64> {
    let n = (range / step + 1e-9).floor() as i64;
    (-n..=n).map(|k| k as f64 * step).collect()
}

/// Gaussian smoothing with replicated edges. NaN cells are treated as
/// missing: they receive no weight and stay NaN.
pub fn gaussian_smooth(values: &[Vec<f64>], sigma: f64) -> Vec<Vec<f64>> {
    if sigma <= 0.0 || values.is_empty() {
        return values.to_vec();
    }
    let radius = (4.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let rows = values.len() as i64;
    let cols = values[0].len() as i64;
    let mut out = vec![vec![f64::NAN; cols as usize]; rows as usize];
    for i in 0..rows {
        for j in 0..cols {
            if values[i as usize][j as usize].is_nan() {
                continue;
            }
            let mut acc = 0.0;
            let mut weight = 0.0;
            for (di, wi) in kernel.iter().enumerate() {
                let ii = (i + di as i64 - radius).clamp(0, rows - 1) as usize;
                for (dj, wj) in kernel.iter().enumerate() {
                    let jj = (j + dj as i64 - radius).clamp(0, cols - 1) as usize;
                    let v = values[ii][jj];
                    if !v.is_nan() {
                        acc += wi * wj * v;
                        weight += wi * wj;
                    }
                }
            }
            out[i as usize][j as usize] = acc / weight;
        }
    }
    out
}

/// Earliest maximum over non-NaN cells, row-major.
fn argmax(values: &[Vec<f64>]) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_nan() && v > best.map_or(f64::NEG_INFINITY, |b| b.1) {
                best = Some(((i, j), v));
            }
        }
    }
    best.map(|b| b.0)
}

/// Rasters `(alpha1, beta1)` over the full range with the beam angle locked
/// to that of `locked`.
pub fn position_search<O: Objective + ?Sized>(
    obj: &mut O,
    locked: &MirrorState,
    cfg: &PositionSearchConfig,
) -> Result<ScanMap> {
    let limits = locked.limits();
    let locks = (locked.alpha1() - locked.alpha2(), locked.beta1() - locked.beta2());
    let axis1 = grid(cfg.range, cfg.step);
    let axis2 = axis1.clone();
    let mut t = Tracker::new(obj);
    let mut values = vec![vec![f64::NAN; axis2.len()]; axis1.len()];
    for (i, &a1) in axis1.iter().enumerate() {
        for (j, &b1) in axis2.iter().enumerate() {
            if let Some(s) = locked_state(limits, a1, b1, locks) {
                let e = t.eval(&s);
                if e.valid && e.score.is_finite() {
                    values[i][j] = e.score;
                }
            }
        }
    }
    let smoothed = (cfg.smooth_sigma > 0.0).then(|| gaussian_smooth(&values, cfg.smooth_sigma));
    let argmax = argmax(smoothed.as_ref().unwrap_or(&values)).ok_or_else(|| {
        Error::Validation("position raster has no valid point for the locked beam angle".into())
    })?;
    Ok(ScanMap {
        axis1,
        axis2,
        values,
        smoothed,
        argmax,
        locks,
        limits,
        evaluations: t.evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Random,
    Angle,
    Position,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchOutcome {
    pub objective: ObjectiveKind,
    pub stage_reached: Stage,
    pub start_state: MirrorState,
    pub random: StageResult,
    pub angle: StageResult,
    /// State the mirrors are left at, and its measured score.
    pub final_state: MirrorState,
    pub final_score: f64,
    /// Best state over every evaluation of every stage.
    pub best_state: MirrorState,
    pub best_score: f64,
    pub evaluations: usize,
    pub threshold: f64,
    /// Evaluation count times the objective's evaluation time, s.
    pub elapsed: f64,
    #[serde(skip)]
    pub scan: Option<ScanMap>,
}

/// Runs the three stages in order.
pub fn auto_couple<O: Objective + ?Sized>(obj: &mut O, cfg: &AutoCoupleConfig) -> Result<SearchOutcome> {
    cfg.validate()?;
    let start = cfg.start_state();
    let threshold = cfg.random.threshold_fraction * obj.nominal_peak();
    let random = random_search(obj, &start, &cfg.random, threshold)?;
    let angle = angle_search(obj, &random.state, &cfg.angle);

    let mut best = (random.state, random.score);
    if angle.score > best.1 {
        best = (angle.state, angle.score);
    }
    let mut evaluations = random.evaluations + angle.evaluations;
    let (stage_reached, final_state, final_score, scan) = if cfg.position_stage {
        let scan = position_search(obj, &angle.state, &cfg.position)?;
        evaluations += scan.evaluations;
        for (i, row) in scan.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v > best.1 {
                    best = (scan.state_at(i, j).expect("scored points are in range"), v);
                }
            }
        }
        let state = scan.argmax_state();
        let score = scan.argmax_value();
        (Stage::Position, state, score, Some(scan))
    } else {
        (Stage::Angle, angle.state, angle.score, None)
    };
    Ok(SearchOutcome {
        objective: obj.kind(),
        stage_reached,
        start_state: start,
        random,
        angle,
        final_state,
        final_score,
        best_state: best.0,
        best_score: best.1,
        evaluations,
        threshold,
        elapsed: evaluations as f64 * obj.eval_time(),
        scan,
    })
}
