//! `beamsim` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 I/O failure,
//! 3 auto-coupling found no signal, 4 self-verification failed.

mod config;
mod error;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beamsim::autocouple::{ObjectiveKind, SimulatedObjective};
use beamsim::control::write_telemetry_csv;
use beamsim::sim::{self, RunSummary, Scenario};
use beamsim::turbulence::{band_deviation, estimate_psd, synthesize, SpectrumProfile};
use clap::{error::ErrorKind, Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::Loaded;
use crate::error::{CliError, CliResult};

const SEED_ENV: &str = "BEAMSIM_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "beamsim",
    version,
    about = "Beam-wander correction simulator for fiber-coupled free-space receivers",
    after_help = "Exit codes: 0 ok, 1 invalid input, 2 I/O failure, 3 no signal found, 4 verification failed.\n\
                  BEAMSIM_SEED sets the master seed when neither --seed nor the config gives one."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Auto-couple, then run the wander phase and write the metric series.
    Simulate(SimulateArgs),
    /// Run the auto-coupling pipeline alone and write the scan map.
    Autocouple(AutocoupleArgs),
    /// Synthesize a wander series and optionally re-estimate its spectrum.
    Turbulence(TurbulenceArgs),
    /// Run the built-in oracle checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario file (TOML); keys it omits come from the preset.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base preset: fig6a, fig6b or fig7a [default: fig6b, or run.preset].
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Master seed; overrides run.seed and BEAMSIM_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the output files.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Run with the controller off and on, and report the improvement.
    #[arg(long)]
    compare: bool,
    /// Override the wander-phase duration, s.
    #[arg(long, value_name = "SECONDS")]
    duration: Option<f64>,
    /// Also write telemetry.csv with loop errors, commands and flags.
    #[arg(long)]
    telemetry: bool,
    /// Keep every Nth loop update in the telemetry.
    #[arg(long, value_name = "N", default_value_t = 10)]
    telemetry_stride: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Objective {
    /// Photodiode power.
    Power,
    /// Coincidence peak of the pair-source cross-correlation.
    G2,
}

#[derive(Debug, Args)]
struct AutocoupleArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Search objective [default: follows the source kind].
    #[arg(long, value_enum)]
    objective: Option<Objective>,
}

#[derive(Debug, Args)]
struct TurbulenceArgs {
    /// Builtin profile name, `zero`, or a two-column CSV (frequency_hz, psd_rad2_per_hz).
    #[arg(long, value_name = "NAME|CSV", default_value = "outdoor2_6km")]
    profile: String,
    /// Series duration, s.
    #[arg(long, value_name = "SECONDS", default_value_t = 10.0)]
    duration: f64,
    /// Synthesis seed; overrides BEAMSIM_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Sample rate, Hz.
    #[arg(long, value_name = "HZ", default_value_t = 10_000.0)]
    sample_rate: f64,
    /// Amplitude factor applied to the profile's angles.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Re-estimate the spectrum and write spectrum.csv.
    #[arg(long)]
    estimate: bool,
    /// Averaged segments for the estimate.
    #[arg(long, value_name = "N", default_value_t = 10)]
    segments: usize,
    /// Directory for the output files.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Test hook: scale the closed-form efficiency by 1% so the oracle checks fail.
    #[arg(long)]
    perturb_closed_form: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Autocouple(a) => autocouple(a),
        Command::Turbulence(a) => turbulence(a),
        Command::Verify(a) => verify_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Invalid(format!("{SEED_ENV}=`{v}` is not a non-negative integer"))),
        Err(_) => Ok(None),
    }
}

/// Loads the scenario and applies the seed in priority order: flag, file,
/// environment, zero.
fn load_scenario(args: &ScenarioArgs) -> CliResult<(Scenario, u64)> {
    let loaded: Loaded = match &args.config {
        Some(path) => config::load(path, args.preset.as_deref())?,
        None => config::from_preset(args.preset.as_deref())?,
    };
    if let Some(path) = &args.config {
        if !loaded.defaulted.is_empty() {
            eprintln!(
                "notice: {} sets {} of {} keys; the rest come from preset {}: {}",
                path.display(),
                config::SCHEMA.iter().map(|(_, k)| k.len()).sum::<usize>() - loaded.defaulted.len(),
                config::SCHEMA.iter().map(|(_, k)| k.len()).sum::<usize>(),
                loaded.preset.name(),
                loaded.defaulted.join(", ")
            );
        }
    }
    let seed = match args.seed.or(loaded.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let scn = loaded.scenario.with_seed(seed);
    scn.validate()?;
    Ok((scn, seed))
}

fn write_file(dir: &Path, name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| CliError::io(&path, e))?;
    fs::write(&path, buf).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> CliResult<PathBuf> {
    write_file(dir, name, |b| {
        serde_json::to_writer_pretty(&mut *b, value).map_err(std::io::Error::other)?;
        b.push(b'\n');
        Ok(())
    })
}

fn print_run(label: &str, r: &RunSummary) {
    println!(
        "{label}: {} mean {:.6} std {:.6} over {} samples; mean efficiency {:.4}",
        r.metric.column(),
        r.mean,
        r.std,
        r.analysis_len,
        r.mean_efficiency
    );
    if r.saturated_ticks > 0 || r.fault_ticks > 0 {
        println!("{label}: {} saturated and {} faulted loop updates", r.saturated_ticks, r.fault_ticks);
    }
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let (mut scn, seed) = load_scenario(&a.scenario)?;
    if let Some(d) = a.duration {
        scn.duration = d;
        scn.validate()?;
    }
    let out = &a.scenario.out_dir;
    println!("scenario {} seed {seed}, {} s", scn.name, scn.duration);

    let telemetry_run = |scn: &Scenario| -> CliResult<RunSummary> {
        if a.telemetry {
            let (r, rows) = sim::run_with_telemetry(scn, a.telemetry_stride)?;
            write_file(out, "telemetry.csv", |b| write_telemetry_csv(b, &rows))?;
            Ok(r)
        } else {
            Ok(sim::run(scn)?)
        }
    };

    if a.compare {
        let off = sim::run(&scn.clone().with_controller(false))?;
        let on = telemetry_run(&scn.clone().with_controller(true))?;
        let imp = sim::compare(&off, &on)?;
        write_file(out, "series_off.csv", |b| off.write_series_csv(b))?;
        write_file(out, "series_on.csv", |b| on.write_series_csv(b))?;
        write_json(out, "summary.json", &json!({ "seed": seed, "off": off, "on": on, "improvement": imp }))?;
        print_run("controller off", &off);
        print_run("controller on", &on);
        println!("improvement: mean x{:.3}, std ratio {:.2}", imp.mean_ratio, imp.std_ratio);
    } else {
        let r = telemetry_run(&scn)?;
        write_file(out, "series.csv", |b| r.write_series_csv(b))?;
        write_json(out, "summary.json", &json!({ "seed": seed, "run": r }))?;
        print_run(if r.controller_enabled { "controller on" } else { "controller off" }, &r);
    }
    Ok(())
}

fn objective_name(kind: ObjectiveKind) -> &'static str {
    match kind {
        ObjectiveKind::Power => "power",
        ObjectiveKind::G2Peak => "g2_peak",
    }
}

fn autocouple(a: AutocoupleArgs) -> CliResult<()> {
    let (scn, seed) = load_scenario(&a.scenario)?;
    let kind = a.objective.map(|o| match o {
        Objective::Power => ObjectiveKind::Power,
        Objective::G2 => ObjectiveKind::G2Peak,
    });
    let outcome = sim::couple(&scn, &scn.source, kind)?;
    let eta = SimulatedObjective::power(scn.layout, scn.misalignment).efficiency(&outcome.final_state);
    let peak = scn.layout.peak_efficiency();
    let out = &a.scenario.out_dir;
    if let Some(scan) = &outcome.scan {
        let comments = [
            format!("position scan, scenario {} seed {seed}", scn.name),
            format!(
                "mirror 2 keeps its locked offset from mirror 1; NaN marks points it cannot reach; objective {}",
                objective_name(outcome.objective)
            ),
        ];
        write_file(out, "scan_map.csv", |b| scan.write_csv(b, &comments))?;
    }
    write_json(
        out,
        "outcome.json",
        &json!({
            "scenario": scn.name,
            "seed": seed,
            "efficiency": eta,
            "peak_efficiency": peak,
            "outcome": outcome,
        }),
    )?;
    println!(
        "objective {}: stage {}, score {:.6}, efficiency {eta:.6} ({:.4} of peak) after {} evaluations",
        objective_name(outcome.objective),
        json!(outcome.stage_reached).as_str().unwrap_or("?"),
        outcome.final_score,
        eta / peak,
        outcome.evaluations
    );
    Ok(())
}

fn turbulence(a: TurbulenceArgs) -> CliResult<()> {
    let profile = config::resolve_profile(&a.profile, Path::new("."))?;
    if !(a.scale.is_finite() && a.scale >= 0.0) {
        return Err(CliError::Invalid("--scale must be non-negative".into()));
    }
    let profile: SpectrumProfile = profile.scaled(a.scale);
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let series = synthesize(&profile, a.duration, a.sample_rate, seed)?;
    write_file(&a.out_dir, "series.csv", |b| series.write_csv(b))?;
    println!(
        "{} samples at {} Hz: rms x {:.4e} rad, rms y {:.4e} rad, {} clipped",
        series.len(),
        a.sample_rate,
        series.rms_x(),
        series.rms_y(),
        series.clipped
    );
    if a.estimate {
        let est = estimate_psd(&series, a.segments)?;
        let rows = est
            .freqs
            .iter()
            .zip(&est.psd)
            .map(|(&f, &p)| vec![f, p, profile.value_at(f)]);
        let comments = [format!("profile {}, seed {seed}, {} segments", a.profile, a.segments)];
        write_file(&a.out_dir, "spectrum.csv", |b| {
            beamsim::csv::write_table(
                b,
                &comments,
                &["frequency_hz", "psd_rad2_per_hz", "reference_psd_rad2_per_hz"],
                rows,
            )
        })?;
        let hi = (a.sample_rate / 2.0).min(beamsim::turbulence::PROFILE_MAX_HZ);
        let lo = est.freqs.get(1).copied().unwrap_or(hi).max(0.5).min(hi);
        println!(
            "round trip: worst in-band deviation {:.3} over {lo}..{hi} Hz",
            band_deviation(&profile, &est, lo, hi, 3, 0.01)
        );
    }
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> CliResult<()> {
    let report = verify::run(verify::Options {
        perturb_closed_form: a.perturb_closed_form,
    });
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{}", report.table());
    }
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Verify(format!("failed checks: {}", report.failed().join(", "))))
    }
}
