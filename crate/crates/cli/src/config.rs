//! TOML scenario files.
//!
//! Every key carries its unit in the name. Keys not present are taken from
//! the base preset and listed in a notice; unknown sections or keys are
//! rejected with the offending name.

use std::path::{Path, PathBuf};

use beamsim::detect::SourceKind;
use beamsim::sim::{Preset, Scenario, WanderSource};
use beamsim::turbulence::{BuiltinProfile, SpectrumProfile};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

/// Recognized keys per section.
pub const SCHEMA: &[(&str, &[&str])] = &[
    (
        "layout",
        &[
            "d1_m",
            "d2_m",
            "d3_m",
            "focal_length_mm",
            "wavelength_nm",
            "mode_field_radius_um",
            "beam_waist_mm",
            "mirror_range_mrad",
            "mirror_resolution_urad",
            "psd_noise_um",
            "misalignment_x_mrad",
            "misalignment_y_mrad",
        ],
    ),
    ("turbulence", &["enabled", "profile", "scale"]),
    ("platform", &["enabled", "profile", "scale"]),
    (
        "source",
        &[
            "kind",
            "laser_power_mw",
            "pump_power_mw",
            "pair_rate_per_mw_hz",
            "channel_loss",
            "detector_efficiency",
            "dark_rate_hz",
            "coincidence_window_ns",
            "photodiode_rel_noise",
            "photodiode_floor_nw",
            "brightness_rel_rms",
            "brightness_corr_time_s",
            "target_count_rate_hz",
        ],
    ),
    (
        "controller",
        &[
            "enabled",
            "rate_hz",
            "actuator_bandwidth_hz",
            "angle_kp",
            "angle_ki_per_s",
            "angle_kd_s",
            "position_kp",
            "position_ki_per_s",
            "position_kd_s",
            "output_limit_mrad",
        ],
    ),
    (
        "autocouple",
        &[
            "enabled",
            "start_alpha1_mrad",
            "start_beta1_mrad",
            "start_alpha2_mrad",
            "start_beta2_mrad",
            "random_range_mrad",
            "threshold_fraction",
            "max_iters",
            "angle_half_range_mrad",
            "angle_step_urad",
            "angle_refine",
            "position_stage",
            "position_range_mrad",
            "position_step_urad",
            "smooth_sigma_steps",
        ],
    ),
    ("run", &["preset", "seed", "duration_s", "metric_rate_hz"]),
];

/// A scenario read from a file, before the seed is applied.
#[derive(Debug)]
pub struct Loaded {
    pub scenario: Scenario,
    pub preset: Preset,
    pub seed: Option<u64>,
    /// `section.key` names filled from the preset.
    pub defaulted: Vec<String>,
}

/// Starts from a preset without a file.
pub fn from_preset(name: Option<&str>) -> CliResult<Loaded> {
    let preset = Preset::parse(name.unwrap_or("fig6b"))?;
    Ok(Loaded {
        scenario: Scenario::preset(preset),
        preset,
        seed: None,
        defaulted: Vec::new(),
    })
}

pub fn load(path: &Path, preset_override: Option<&str>) -> CliResult<Loaded> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse(&text, preset_override, &base_dir).map_err(|e| match e {
        CliError::Invalid(m) => CliError::Invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Parses a config document. Relative profile paths resolve against `base_dir`.
pub fn parse(text: &str, preset_override: Option<&str>, base_dir: &Path) -> CliResult<Loaded> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| CliError::Invalid(e.to_string()))?;

    for (name, value) in &doc {
        let Some((_, keys)) = SCHEMA.iter().find(|(s, _)| s == name) else {
            return Err(CliError::Invalid(format!("unknown section `{name}`")));
        };
        let Value::Table(table) = value else {
            return Err(CliError::Invalid(format!("`{name}` must be a section")));
        };
        if let Some(key) = table.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(CliError::Invalid(format!(
                "unknown key `{name}.{key}`; expected one of: {}",
                keys.join(", ")
            )));
        }
    }

    let file_preset = match doc.get("run").and_then(|r| r.get("preset")) {
        Some(v) => Some(string(v, "run.preset")?),
        None => None,
    };
    let preset = Preset::parse(preset_override.or(file_preset.as_deref()).unwrap_or("fig6b"))?;
    let mut ctx = Loaded {
        scenario: Scenario::preset(preset),
        preset,
        seed: None,
        defaulted: Vec::new(),
    };

    for (section, keys) in SCHEMA {
        let table = doc.get(*section).and_then(Value::as_table);
        for key in *keys {
            match table.and_then(|t| t.get(*key)) {
                Some(v) => apply(&mut ctx, base_dir, section, key, v)?,
                None => ctx.defaulted.push(format!("{section}.{key}")),
            }
        }
    }
    Ok(ctx)
}

fn float(v: &Value, name: &str) -> CliResult<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(CliError::Invalid(format!("`{name}` must be a number"))),
    }
}

fn boolean(v: &Value, name: &str) -> CliResult<bool> {
    v.as_bool()
        .ok_or_else(|| CliError::Invalid(format!("`{name}` must be true or false")))
}

fn string(v: &Value, name: &str) -> CliResult<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| CliError::Invalid(format!("`{name}` must be a string")))
}

fn unsigned(v: &Value, name: &str) -> CliResult<u64> {
    v.as_integer()
        .and_then(|i| u64::try_from(i).ok())
        .ok_or_else(|| CliError::Invalid(format!("`{name}` must be a non-negative integer")))
}

/// Resolves a builtin profile name, `zero`, or a two-column CSV path.
pub fn resolve_profile(spec: &str, base_dir: &Path) -> CliResult<SpectrumProfile> {
    if spec == "zero" {
        return Ok(SpectrumProfile::zero(beamsim::turbulence::PROFILE_MAX_HZ));
    }
    if let Ok(b) = BuiltinProfile::parse(spec) {
        return Ok(b.profile());
    }
    let path: PathBuf = base_dir.join(spec);
    let file = std::fs::File::open(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            let names: Vec<_> = BuiltinProfile::ALL.iter().map(|b| b.name()).collect();
            CliError::Invalid(format!(
                "profile `{spec}` is neither a builtin ({}, zero) nor a readable file",
                names.join(", ")
            ))
        } else {
            CliError::io(&path, e)
        }
    })?;
    Ok(SpectrumProfile::read_csv(std::io::BufReader::new(file), spec)?)
}

fn apply(ctx: &mut Loaded, base_dir: &Path, section: &str, key: &str, v: &Value) -> CliResult<()> {
    let name = format!("{section}.{key}");
    let f = || float(v, &name);
    let s = &mut ctx.scenario;
    match (section, key) {
        ("layout", "d1_m") => s.layout.d1 = f()?,
        ("layout", "d2_m") => s.layout.d2 = f()?,
        ("layout", "d3_m") => s.layout.d3 = f()?,
        ("layout", "focal_length_mm") => s.layout.focal_length = f()? * 1e-3,
        ("layout", "wavelength_nm") => s.layout.wavelength = f()? * 1e-9,
        ("layout", "mode_field_radius_um") => s.layout.mode_field_radius = f()? * 1e-6,
        ("layout", "beam_waist_mm") => s.layout.beam_waist = f()? * 1e-3,
        ("layout", "mirror_range_mrad") => {
            s.limits.range = f()? * 1e-3;
            s.autocouple.limits.range = s.limits.range;
        }
        ("layout", "mirror_resolution_urad") => {
            s.limits.resolution = f()? * 1e-6;
            s.autocouple.limits.resolution = s.limits.resolution;
        }
        ("layout", "psd_noise_um") => s.psd_noise = f()? * 1e-6,
        ("layout", "misalignment_x_mrad") => s.misalignment.tilt_x = f()? * 1e-3,
        ("layout", "misalignment_y_mrad") => s.misalignment.tilt_y = f()? * 1e-3,

        ("turbulence" | "platform", _) => {
            let w: &mut WanderSource = if section == "turbulence" { &mut s.turbulence } else { &mut s.platform };
            match key {
                "enabled" => w.enabled = boolean(v, &name)?,
                "scale" => w.scale = f()?,
                _ => {
                    let spec = string(v, &name)?;
                    let profile = resolve_profile(&spec, base_dir)?;
                    w.custom = BuiltinProfile::parse(&spec).is_err().then_some(profile);
                    w.profile = spec;
                }
            }
        }

        ("source", "kind") => {
            s.source.kind = match string(v, &name)?.as_str() {
                "laser" => SourceKind::Laser,
                "spdc" => SourceKind::Spdc,
                other => return Err(CliError::Invalid(format!("`{name}` must be laser or spdc, got `{other}`"))),
            }
        }
        ("source", "laser_power_mw") => s.source.laser_power_w = f()? * 1e-3,
        ("source", "pump_power_mw") => s.source.pump_power_mw = f()?,
        ("source", "pair_rate_per_mw_hz") => s.source.pair_rate_per_mw = f()?,
        ("source", "channel_loss") => s.source.channel_loss = f()?,
        ("source", "detector_efficiency") => s.source.detector_efficiency = f()?,
        ("source", "dark_rate_hz") => s.source.dark_rate = f()?,
        ("source", "coincidence_window_ns") => s.source.coincidence_window = f()? * 1e-9,
        ("source", "photodiode_rel_noise") => s.source.photodiode_rel_noise = f()?,
        ("source", "photodiode_floor_nw") => s.source.photodiode_floor_w = f()? * 1e-9,
        ("source", "brightness_rel_rms") => s.source.brightness_rel_rms = f()?,
        ("source", "brightness_corr_time_s") => s.source.brightness_corr_time = f()?,
        // Zero keeps the configured pump power.
        ("source", "target_count_rate_hz") => s.target_count_rate = Some(f()?).filter(|r| *r != 0.0),

        ("controller", "enabled") => s.controller.enabled = boolean(v, &name)?,
        ("controller", "rate_hz") => s.controller.rate = f()?,
        ("controller", "actuator_bandwidth_hz") => s.controller.actuator_bandwidth = f()?,
        ("controller", "angle_kp") => s.controller.angle_gains.kp = f()?,
        ("controller", "angle_ki_per_s") => s.controller.angle_gains.ki = f()?,
        ("controller", "angle_kd_s") => s.controller.angle_gains.kd = f()?,
        ("controller", "position_kp") => s.controller.position_gains.kp = f()?,
        ("controller", "position_ki_per_s") => s.controller.position_gains.ki = f()?,
        ("controller", "position_kd_s") => s.controller.position_gains.kd = f()?,
        ("controller", "output_limit_mrad") => s.controller.output_limit = f()? * 1e-3,

        ("autocouple", "enabled") => s.autocouple_enabled = boolean(v, &name)?,
        ("autocouple", "start_alpha1_mrad") => s.autocouple.start[0] = f()? * 1e-3,
        ("autocouple", "start_beta1_mrad") => s.autocouple.start[1] = f()? * 1e-3,
        ("autocouple", "start_alpha2_mrad") => s.autocouple.start[2] = f()? * 1e-3,
        ("autocouple", "start_beta2_mrad") => s.autocouple.start[3] = f()? * 1e-3,
        ("autocouple", "random_range_mrad") => s.autocouple.random.range = f()? * 1e-3,
        ("autocouple", "threshold_fraction") => s.autocouple.random.threshold_fraction = f()?,
        ("autocouple", "max_iters") => s.autocouple.random.max_iters = unsigned(v, &name)? as usize,
        ("autocouple", "angle_half_range_mrad") => s.autocouple.angle.half_range = f()? * 1e-3,
        ("autocouple", "angle_step_urad") => s.autocouple.angle.step = f()? * 1e-6,
        ("autocouple", "angle_refine") => s.autocouple.angle.refine = boolean(v, &name)?,
        ("autocouple", "position_stage") => s.autocouple.position_stage = boolean(v, &name)?,
        ("autocouple", "position_range_mrad") => s.autocouple.position.range = f()? * 1e-3,
        ("autocouple", "position_step_urad") => s.autocouple.position.step = f()? * 1e-6,
        ("autocouple", "smooth_sigma_steps") => s.autocouple.position.smooth_sigma = f()?,

        // Already consumed to pick the base scenario.
        ("run", "preset") => {}
        ("run", "seed") => ctx.seed = Some(unsigned(v, &name)?),
        ("run", "duration_s") => s.duration = f()?,
        ("run", "metric_rate_hz") => s.metric_rate = f()?,
        _ => unreachable!("schema and apply disagree on `{name}`"),
    }
    Ok(())
}
