//! Configuration file loading and assembly.
//!
//! One TOML file carries every tunable, one section per module, and the
//! repository ships `reference.cfg` with the calibrated reference rig. A few
//! values are derived here during assembly rather than stored twice: the
//! profiler's angles come from the strike section plus a stroke depth, and
//! the solenoid model pairs its spec with the calibrated floor speed. Each
//! number therefore has exactly one source line in the file.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::acoustics::AcousticConfig;
use crate::gateway::{AxisLimits, KeyColor, KeyEntry, KeyMap};
use crate::mallet::{Envelope, MalletGeometry, MotorSpec, StrikeConfig};
use crate::profile::ProfilerConfig;
use crate::servo::{OvercurrentLimit, PidGains, Plant, SolenoidModel, SolenoidSpec};
use crate::striker::{RigConfig, ServoConfig};

/// Contents of `reference.cfg`, compiled in so library consumers and tests
/// can run the reference rig without a file lookup.
pub const REFERENCE_CFG: &str = include_str!("../../../reference.cfg");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Raw file layout
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mallet: MalletGeometry,
    motor: MotorSpec,
    strike: RawStrike,
    envelope: Envelope,
    profiler: RawProfiler,
    servo: ServoConfig,
    gains: PidGains,
    overcurrent: OvercurrentLimit,
    solenoid: RawSolenoid,
    acoustics: AcousticConfig,
    axis: AxisLimits,
    scheduler: RawScheduler,
    bench: BenchConfig,
    keymap: RawKeymap,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStrike {
    contact_angle: f64,
    gravity: f64,
    /// Downstroke torque the sized motor must deliver at contact (Nm).
    design_torque: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfiler {
    accel_min: f64,
    accel_max: f64,
    travel_time: f64,
    lift_time: f64,
    /// Rest angle offset above the key surface (rad); the profiler's
    /// `default_position` is `contact_angle + stroke_depth`.
    stroke_depth: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolenoid {
    max_force_torque: f64,
    saturation_velocity: u8,
    noise_sigma: f64,
    min_spl_floor: f64,
    impulse_gain: f64,
    travel_time: f64,
    cycle_time: f64,
    /// Impact speed of the quietest stroke (rad/s); calibrated so its meter
    /// reading lands on `min_spl_floor`.
    floor_speed: f64,
}

impl RawSolenoid {
    fn spec(&self) -> SolenoidSpec {
        SolenoidSpec {
            max_force_torque: self.max_force_torque,
            saturation_velocity: self.saturation_velocity,
            noise_sigma: self.noise_sigma,
            min_spl_floor: self.min_spl_floor,
            impulse_gain: self.impulse_gain,
            travel_time: self.travel_time,
            cycle_time: self.cycle_time,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheduler {
    tick_period: f64,
    queue_capacity: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKeymap {
    keys: Vec<KeyRow>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyRow {
    pitch: u8,
    axis_position: f64,
    striker: usize,
    color: KeyColor,
}

/// Sweep-bench knobs that are operating choices rather than physics.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// First trial rate of the servo speed sweep (Hz); chosen below the
    /// known cutoff so the sweep records sustained trials before failing.
    pub bldc_start_hz: f64,
    /// First trial rate of the solenoid speed sweep (Hz).
    pub solenoid_start_hz: f64,
}

// ---------------------------------------------------------------------------
// Assembled configuration
// ---------------------------------------------------------------------------

/// Fully validated runtime configuration.
#[derive(Debug, Clone)]
pub struct Config {
    pub plant: Plant,
    pub envelope: Envelope,
    pub design_torque: f64,
    pub profiler: ProfilerConfig,
    pub servo: ServoConfig,
    pub gains: PidGains,
    pub overcurrent: OvercurrentLimit,
    pub solenoid: SolenoidModel,
    pub acoustics: AcousticConfig,
    pub axis_limits: AxisLimits,
    pub tick_period: f64,
    pub queue_capacity: usize,
    pub bench: BenchConfig,
    pub keymap: KeyMap,
}

impl Config {
    /// The calibrated reference rig compiled into the library.
    pub fn reference() -> Config {
        Config::from_str(REFERENCE_CFG).expect("embedded reference.cfg must be valid")
    }

    pub fn from_path(path: &Path) -> Result<Config, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Config::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Config, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        assemble(raw)
    }

    /// Striker-rig slice of the configuration.
    pub fn rig_config(&self) -> RigConfig {
        RigConfig {
            plant: self.plant,
            profiler: self.profiler,
            servo: self.servo,
            gains: self.gains,
            overcurrent: self.overcurrent,
            axis_limits: self.axis_limits,
            keymap: self.keymap.clone(),
            tick_period: self.tick_period,
            queue_capacity: self.queue_capacity,
        }
    }
}

fn assemble(raw: RawConfig) -> Result<Config, ConfigError> {
    let invalid = |msg: String| ConfigError::Invalid(msg);

    raw.mallet
        .validate()
        .map_err(|e| invalid(format!("[mallet] {e}")))?;
    raw.motor
        .validate()
        .map_err(|e| invalid(format!("[motor] {e}")))?;
    let strike = StrikeConfig {
        contact_angle: raw.strike.contact_angle,
        gravity: raw.strike.gravity,
    };
    strike
        .validate()
        .map_err(|e| invalid(format!("[strike] {e}")))?;
    if !(raw.strike.design_torque.is_finite() && raw.strike.design_torque > 0.0) {
        return Err(invalid(format!(
            "[strike] design_torque = {}",
            raw.strike.design_torque
        )));
    }
    for (name, v) in [
        ("max_diameter", raw.envelope.max_diameter),
        ("max_depth", raw.envelope.max_depth),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("[envelope] {name} = {v}")));
        }
    }

    if !(raw.profiler.stroke_depth.is_finite() && raw.profiler.stroke_depth > 0.0) {
        return Err(invalid(format!(
            "[profiler] stroke_depth = {}",
            raw.profiler.stroke_depth
        )));
    }
    let profiler = ProfilerConfig {
        accel_min: raw.profiler.accel_min,
        accel_max: raw.profiler.accel_max,
        travel_time: raw.profiler.travel_time,
        lift_time: raw.profiler.lift_time,
        default_position: raw.strike.contact_angle + raw.profiler.stroke_depth,
        contact_position: raw.strike.contact_angle,
    };
    profiler
        .validate()
        .map_err(|e| invalid(format!("[profiler] {e}")))?;

    validate_servo(&raw.servo).map_err(invalid)?;
    validate_gains(&raw.gains).map_err(invalid)?;

    if !(raw.overcurrent.i2t_limit > 0.0 && raw.overcurrent.i2t_limit.is_finite()) {
        return Err(invalid(format!(
            "[overcurrent] i2t_limit = {}",
            raw.overcurrent.i2t_limit
        )));
    }
    if !(raw.overcurrent.cooldown_tau > 0.0 && raw.overcurrent.cooldown_tau.is_finite()) {
        return Err(invalid(format!(
            "[overcurrent] cooldown_tau = {}",
            raw.overcurrent.cooldown_tau
        )));
    }

    let solenoid_spec = raw.solenoid.spec();
    solenoid_spec
        .validate()
        .map_err(|e| invalid(format!("[solenoid] {e}")))?;
    let sat = solenoid_spec.saturated_speed();
    if !(raw.solenoid.floor_speed > 0.0 && raw.solenoid.floor_speed < sat) {
        return Err(invalid(format!(
            "[solenoid] floor_speed = {} outside (0, saturated speed {sat})",
            raw.solenoid.floor_speed
        )));
    }
    let solenoid = SolenoidModel::new(solenoid_spec, raw.solenoid.floor_speed);

    raw.acoustics
        .validate()
        .map_err(|e| invalid(format!("[acoustics] {e}")))?;

    for (name, v) in [
        ("v_max", raw.axis.v_max),
        ("a_max", raw.axis.a_max),
        ("travel", raw.axis.travel),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("[axis] {name} = {v}")));
        }
    }

    if !(raw.scheduler.tick_period > 0.0 && raw.scheduler.tick_period.is_finite()) {
        return Err(invalid(format!(
            "[scheduler] tick_period = {}",
            raw.scheduler.tick_period
        )));
    }
    if raw.scheduler.queue_capacity == 0 {
        return Err(invalid("[scheduler] queue_capacity = 0".into()));
    }

    for (name, v) in [
        ("bldc_start_hz", raw.bench.bldc_start_hz),
        ("solenoid_start_hz", raw.bench.solenoid_start_hz),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("[bench] {name} = {v}")));
        }
    }

    let mut seen = std::collections::BTreeSet::new();
    for key in &raw.keymap.keys {
        if !seen.insert(key.pitch) {
            return Err(invalid(format!("[keymap] pitch {} listed twice", key.pitch)));
        }
    }
    let keymap = KeyMap::from_entries(
        raw.keymap.keys.iter().map(|k| {
            (
                k.pitch,
                KeyEntry {
                    axis_position: k.axis_position,
                    striker: k.striker,
                    color: k.color,
                },
            )
        }),
        raw.axis.travel,
    )
    .map_err(|e| invalid(format!("[keymap] {e}")))?;
    if keymap.is_empty() {
        return Err(invalid("[keymap] no keys".into()));
    }

    Ok(Config {
        plant: Plant {
            geom: raw.mallet,
            motor: raw.motor,
            strike,
        },
        envelope: raw.envelope,
        design_torque: raw.strike.design_torque,
        profiler,
        servo: raw.servo,
        gains: raw.gains,
        overcurrent: raw.overcurrent,
        solenoid,
        acoustics: raw.acoustics,
        axis_limits: raw.axis,
        tick_period: raw.scheduler.tick_period,
        queue_capacity: raw.scheduler.queue_capacity,
        bench: raw.bench,
        keymap,
    })
}

fn validate_servo(s: &ServoConfig) -> Result<(), String> {
    if s.substeps == 0 {
        return Err("[servo] substeps = 0".into());
    }
    for (name, v, lo, hi) in [
        ("arm_fraction", s.arm_fraction, 0.0, 1.0),
        ("stall_fraction", s.stall_fraction, 0.0, 1.0),
        ("checkpoint_fraction", s.checkpoint_fraction, 0.0, 1.0),
        ("checkpoint_tolerance", s.checkpoint_tolerance, 0.0, 1.0),
    ] {
        if !(v > lo && v < hi) {
            return Err(format!("[servo] {name} = {v} outside ({lo}, {hi})"));
        }
    }
    if s.stall_fraction >= s.arm_fraction {
        return Err(format!(
            "[servo] stall_fraction {} must sit below arm_fraction {}",
            s.stall_fraction, s.arm_fraction
        ));
    }
    for (name, v) in [
        ("contact_tolerance", s.contact_tolerance),
        ("settle_tolerance", s.settle_tolerance),
        ("settle_speed_eps", s.settle_speed_eps),
        ("homing_torque", s.homing_torque),
        ("homing_speed_eps", s.homing_speed_eps),
        ("homing_settle_time", s.homing_settle_time),
        ("homing_timeout", s.homing_timeout),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(format!("[servo] {name} = {v} must be positive"));
        }
    }
    Ok(())
}

fn validate_gains(g: &PidGains) -> Result<(), String> {
    for (name, v) in [("kp", g.kp), ("ki", g.ki), ("kd", g.kd)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(format!("[gains] {name} = {v} must be >= 0"));
        }
    }
    for (name, v) in [
        ("integral_limit", g.integral_limit),
        ("output_limit", g.output_limit),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(format!("[gains] {name} = {v} must be positive"));
        }
    }
    Ok(())
}
