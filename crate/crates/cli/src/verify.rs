//! Self-verification: closed-form efficiency against the numerical overlap
//! integral, decoupling of the plant, and the turbulence synthesis oracles.

use std::time::Instant;

use beamsim::control::{verify_decoupling_distances, DECOUPLING_TOLERANCE};
use beamsim::optics::{coupling_efficiency, overlap_efficiency_numeric, BeamIncidence, GridSpec, OpticalLayout};
use beamsim::turbulence::{band_deviation, estimate_psd, synthesize, synthesize_with, BuiltinProfile, SynthesisConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub pass: bool,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect()
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{}  {:width$}  {} [{:.1} s]\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.detail,
                c.seconds
            ));
        }
        out
    }
}

/// Options for the verification run.
#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    /// Scale the closed-form efficiency by 1% to exercise the failure path.
    pub perturb_closed_form: bool,
}

pub fn run(opts: Options) -> Report {
    let closed = |layout: &OpticalLayout, inc: &BeamIncidence| {
        let eta = coupling_efficiency(layout, inc);
        if opts.perturb_closed_form {
            eta * 1.01
        } else {
            eta
        }
    };
    let checks = vec![
        timed("closed_form_vs_overlap", || closed_form_sweep(&closed)),
        timed("peak_efficiency", || peak(&closed)),
        timed("decoupling", decoupling),
        timed("parseval", parseval),
        timed("psd_round_trip", round_trip),
    ];
    Report {
        pass: checks.iter().all(|c| c.pass),
        checks,
    }
}

fn timed(name: &'static str, f: impl FnOnce() -> (bool, String)) -> Check {
    let start = Instant::now();
    let (pass, detail) = f();
    Check {
        name,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn closed_form_sweep(closed: &dyn Fn(&OpticalLayout, &BeamIncidence) -> f64) -> (bool, String) {
    let layout = OpticalLayout::default();
    let n = 25;
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let r = 1e-3 * i as f64 / (n - 1) as f64;
            let g = 1e-3 * j as f64 / (n - 1) as f64;
            let inc = BeamIncidence::from_components(r, 0.0, g, 0.0);
            let numeric = match overlap_efficiency_numeric(&layout, &inc, &GridSpec::for_incidence(&layout, &inc)) {
                Ok(v) => v,
                Err(e) => return (false, format!("overlap integral failed at r'={r:e} m, gamma={g:e} rad: {e}")),
            };
            worst = worst.max((closed(&layout, &inc) - numeric).abs() / numeric);
        }
    }
    (
        worst <= 1e-3,
        format!("max relative deviation {worst:.2e} over {n}x{n} points (limit 1e-3)"),
    )
}

fn peak(closed: &dyn Fn(&OpticalLayout, &BeamIncidence) -> f64) -> (bool, String) {
    let layout = OpticalLayout::default();
    let inc = BeamIncidence::aligned();
    let c = closed(&layout, &inc);
    let n = overlap_efficiency_numeric(&layout, &inc, &GridSpec::default()).unwrap_or(f64::NAN);
    let ok = |v: f64| (v - 0.8980).abs() <= 1e-3;
    (ok(c) && ok(n), format!("closed form {c:.5}, overlap {n:.5} (expect 0.8980 +/- 0.001)"))
}

fn decoupling() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let geometries = std::iter::once([0.09, 0.28, 0.76])
        .chain((0..1000).map(|_| std::array::from_fn(|_| rng.random_range(1e-3..5.0))));
    for d in geometries {
        match verify_decoupling_distances(d[0], d[1], d[2]) {
            Ok(r) => worst = worst.max(r.off_diagonal_rel),
            Err(e) => return (false, format!("d = {d:?}: {e}")),
        }
    }
    (
        worst <= DECOUPLING_TOLERANCE,
        format!("worst off-diagonal {worst:.1e} of |PD| over 1001 geometries"),
    )
}

fn parseval() -> (bool, String) {
    let mut worst = 0.0f64;
    for b in BuiltinProfile::ALL {
        let p = b.profile();
        let cfg = SynthesisConfig {
            clip: f64::INFINITY,
            ..Default::default()
        };
        let s = match synthesize_with(&p, 30.0, &cfg, 11) {
            Ok(s) => s,
            Err(e) => return (false, format!("{}: {e}", b.name())),
        };
        let var = 0.5 * (s.rms_x().powi(2) + s.rms_y().powi(2));
        worst = worst.max((var / p.integral() - 1.0).abs());
    }
    (worst <= 0.1, format!("worst variance mismatch {worst:.1e} over builtin profiles (limit 0.1)"))
}

fn round_trip() -> (bool, String) {
    let mut worst = 0.0f64;
    for b in BuiltinProfile::ALL {
        let p = b.profile();
        let est = synthesize(&p, 60.0, 10_000.0, 17).and_then(|s| estimate_psd(&s, 10));
        match est {
            Ok(est) => worst = worst.max(band_deviation(&p, &est, 0.5, 1000.0, 3, 0.01)),
            Err(e) => return (false, format!("{}: {e}", b.name())),
        }
    }
    (worst <= 0.2, format!("worst in-band deviation {worst:.3} over builtin profiles (limit 0.2)"))
}
