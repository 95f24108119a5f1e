//! Bench experiments: the dynamic-range sweep, the repetition-rate sweep,
//! the intensity line fit, and the CSV format the bench emits.
//!
//! Protocol constants live here rather than in the config file because the
//! downstream numbers (fit slopes, cutoff rates) are only comparable between
//! runs that share them.

use std::fmt;
use std::str::FromStr;

use crate::acoustics::{
    impact_to_intensity, spl_to_intensity, AcousticsError, BarRing, IntensitySample, SplMeter,
    SplReading,
};
use crate::config::Config;
use crate::gateway::NoteEvent;
use crate::servo::solenoid_step;
use crate::striker::{DropReason, EventKind, Rig, ScheduleError, StrikerStatus};

/// Strokes recorded per MIDI velocity in the dynamic sweep.
pub const STROKES_PER_VELOCITY: u32 = 6;
/// Dynamic-sweep stroke spacing (s); one stroke per second lets the bar and
/// the SLOW meter decay back toward the floor between strokes.
pub const STROKE_PERIOD: f64 = 1.0;
/// A stroke's reading is the loudest display emission inside this window
/// after its contact (s).
pub const READING_WINDOW: f64 = 0.5;
/// The key every sweep strikes: C2, the bar the bench is built around.
pub const SWEEP_PITCH: u8 = 36;
/// Length of one repetition-rate trial (s).
pub const TRIAL_SECONDS: f64 = 3.0;
/// Repetition-rate step between trials (deci-Hz; 0.1 Hz resolution).
pub const RATE_STEP_DHZ: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actuator {
    Bldc,
    Solenoid,
}

impl fmt::Display for Actuator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Actuator::Bldc => "bldc",
            Actuator::Solenoid => "solenoid",
        })
    }
}

impl FromStr for Actuator {
    type Err = String;

    fn from_str(s: &str) -> Result<Actuator, String> {
        match s {
            "bldc" => Ok(Actuator::Bldc),
            "solenoid" => Ok(Actuator::Solenoid),
            other => Err(format!("unknown actuator {other:?} (bldc|solenoid)")),
        }
    }
}

/// One stroke of a dynamic sweep as it lands in the CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub velocity: u8,
    pub stroke_index: u32,
    /// Loudest meter emission within the reading window after contact (dB).
    pub spl_db: f64,
    /// The reading converted back to intensity (W/m^2).
    pub intensity_w_m2: f64,
    pub contact_tick: u64,
}

/// Least-squares line through per-velocity mean intensities.
#[derive(Debug, Clone, Copy)]
pub struct FitResult {
    /// Intensity per MIDI velocity step (W/m^2 per unit).
    pub slope: f64,
    pub intercept: f64,
    /// L2 norm of the residuals at the fitted points.
    pub residual_norm: f64,
    /// Number of velocity bins the line was fitted through.
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureMode {
    /// The drive's overcurrent protection cut power mid-trial.
    PowerCutoff,
    /// A stroke was dispatched that never produced a contact.
    FailOfHit,
}

impl fmt::Display for FailureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureMode::PowerCutoff => "power_cutoff",
            FailureMode::FailOfHit => "fail_of_hit",
        })
    }
}

/// Outcome of one repetition-rate trial.
#[derive(Debug, Clone, Copy)]
pub struct Trial {
    pub rate_dhz: u64,
    pub sustained: bool,
    pub failure: Option<FailureMode>,
}

impl Trial {
    pub fn rate_hz(&self) -> f64 {
        self.rate_dhz as f64 / 10.0
    }
}

/// Result of a repetition-rate sweep: every trial up to and including the
/// failing one.
#[derive(Debug, Clone)]
pub struct SpeedSweepResult {
    pub trials: Vec<Trial>,
    /// Last sustained rate (Hz).
    pub max_rate_hz: f64,
    pub failure_mode: FailureMode,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("sweep pitch {0} is not on the keymap")]
    UnmappedSweepPitch(u8),
    #[error("homing failed: striker ended {0:?}")]
    HomingFailed(StrikerStatus),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("stroke failed at tick {tick}: {detail}")]
    StrokeFailed { tick: u64, detail: String },
    #[error(transparent)]
    Acoustics(#[from] AcousticsError),
    #[error("stroke at tick {contact_tick} got no meter reading inside its window")]
    MissingReading { contact_tick: u64 },
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("fit needs at least two velocity bins, got {0}")]
    DegenerateFit(usize),
    #[error("first trial at {rate_hz} Hz already failed; nothing was sustained")]
    FirstTrialFailed { rate_hz: f64 },
}

// ---------------------------------------------------------------------------
// Dynamic sweep
// ---------------------------------------------------------------------------

/// Mixes one stroke's identity into the sweep seed (splitmix64 finalizer).
/// Per-stroke seeding keeps every stroke's scatter independent of trial
/// order, so a re-run of any velocity reproduces its exact strokes.
pub fn stroke_seed(sweep_seed: u64, velocity: u8, stroke_index: u32) -> u64 {
    let mut x = sweep_seed
        ^ (u64::from(velocity) << 32)
        ^ u64::from(stroke_index);
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

struct StrokePlan {
    velocity: u8,
    stroke_index: u32,
    dispatch_tick: u64,
}

fn sweep_plan(tick_period: f64) -> Vec<StrokePlan> {
    let period_ticks = (STROKE_PERIOD / tick_period).round() as u64;
    let mut plan = Vec::new();
    let mut n = 0u64;
    for velocity in 1..=127u8 {
        for stroke_index in 0..STROKES_PER_VELOCITY {
            plan.push(StrokePlan {
                velocity,
                stroke_index,
                dispatch_tick: n * period_ticks,
            });
            n += 1;
        }
    }
    plan
}

/// Runs the dynamic-range sweep: `STROKES_PER_VELOCITY` strokes at every
/// MIDI velocity 1..=127, one per second on the sweep key, metering each
/// stroke as the loudest emission inside the reading window after contact.
///
/// The servo sweep is deterministic; `seed` only scatters solenoid strokes.
pub fn run_dynamic_sweep(
    cfg: &Config,
    actuator: Actuator,
    seed: u64,
) -> Result<Vec<SweepRecord>, ExperimentError> {
    let plan = sweep_plan(cfg.tick_period);
    let (contacts, readings) = match actuator {
        Actuator::Bldc => bldc_strokes(cfg, &plan)?,
        Actuator::Solenoid => solenoid_strokes(cfg, &plan, seed)?,
    };
    align(cfg, &plan, &contacts, &readings)
}

/// Runs the plan on the striker rig and meters the contacts.
fn bldc_strokes(
    cfg: &Config,
    plan: &[StrokePlan],
) -> Result<(Vec<u64>, Vec<SplReading>), ExperimentError> {
    let entry = *cfg
        .keymap
        .lookup(SWEEP_PITCH)
        .ok_or(ExperimentError::UnmappedSweepPitch(SWEEP_PITCH))?;
    let mut rig = Rig::new(cfg.rig_config());
    rig.park_axis(crate::gateway::axis_for_striker(entry.striker), entry.axis_position);
    rig.home_striker(entry.striker);
    let status = rig.striker(entry.striker).status();
    if status != StrikerStatus::Idle {
        return Err(ExperimentError::HomingFailed(status));
    }

    let mut ring = BarRing::default();
    let mut meter = SplMeter::new(cfg.acoustics);
    let mut readings = Vec::new();
    let mut contacts = Vec::new();
    let mut next = 0usize;

    let last_dispatch = plan.last().map_or(0, |p| p.dispatch_tick);
    let window_ticks = (READING_WINDOW / cfg.tick_period).ceil() as u64;
    let end_tick = last_dispatch + window_ticks + 100;

    while rig.current_tick() <= end_tick {
        let now = rig.current_tick();
        while next < plan.len() && plan[next].dispatch_tick == now {
            rig.schedule(NoteEvent {
                pitch: SWEEP_PITCH,
                velocity: plan[next].velocity,
                tick: now,
            })?;
            next += 1;
        }
        let events = rig.tick();
        ring.step(cfg.tick_period, &cfg.acoustics);
        for event in &events {
            match event.kind {
                EventKind::StrikeContact { impact_speed } => {
                    contacts.push(event.tick);
                    ring.strike(impact_to_intensity(impact_speed, &cfg.acoustics));
                }
                EventKind::NoteDropped { reason, .. } => {
                    return Err(ExperimentError::StrokeFailed {
                        tick: event.tick,
                        detail: format!("note dropped: {reason:?}"),
                    });
                }
                EventKind::Faulted { reason } => {
                    return Err(ExperimentError::StrokeFailed {
                        tick: event.tick,
                        detail: format!("striker faulted: {reason:?}"),
                    });
                }
                _ => {}
            }
        }
        let time = (now + 1) as f64 * cfg.tick_period;
        readings.extend(meter.feed(IntensitySample {
            time,
            intensity: ring.intensity(),
        })?);
    }
    Ok((contacts, readings))
}

/// Strikes the plan open loop: contact follows dispatch by the plunger
/// travel, impact speed comes from the solenoid model.
fn solenoid_strokes(
    cfg: &Config,
    plan: &[StrokePlan],
    seed: u64,
) -> Result<(Vec<u64>, Vec<SplReading>), ExperimentError> {
    let spec = cfg.solenoid.spec;
    let travel_ticks = (spec.travel_time / cfg.tick_period).round().max(1.0) as u64;
    let mut strikes: Vec<(u64, f64)> = plan
        .iter()
        .map(|p| {
            let speed = solenoid_step(
                &cfg.solenoid,
                p.velocity,
                stroke_seed(seed, p.velocity, p.stroke_index),
            );
            (p.dispatch_tick + travel_ticks, speed)
        })
        .collect();
    strikes.sort_by_key(|&(tick, _)| tick);

    let mut ring = BarRing::default();
    let mut meter = SplMeter::new(cfg.acoustics);
    let mut readings = Vec::new();
    let mut contacts = Vec::new();
    let mut next = 0usize;

    let window_ticks = (READING_WINDOW / cfg.tick_period).ceil() as u64;
    let end_tick = strikes.last().map_or(0, |s| s.0) + window_ticks + 100;

    for now in 0..=end_tick {
        ring.step(cfg.tick_period, &cfg.acoustics);
        while next < strikes.len() && strikes[next].0 == now + 1 {
            // Contact lands inside the interval this tick advances over.
            contacts.push(strikes[next].0);
            ring.strike(impact_to_intensity(strikes[next].1, &cfg.acoustics));
            next += 1;
        }
        let time = (now + 1) as f64 * cfg.tick_period;
        readings.extend(meter.feed(IntensitySample {
            time,
            intensity: ring.intensity(),
        })?);
    }
    Ok((contacts, readings))
}

/// Pairs each stroke with the loudest emission inside its window.
fn align(
    cfg: &Config,
    plan: &[StrokePlan],
    contacts: &[u64],
    readings: &[SplReading],
) -> Result<Vec<SweepRecord>, ExperimentError> {
    if contacts.len() != plan.len() {
        return Err(ExperimentError::StrokeFailed {
            tick: 0,
            detail: format!("{} strokes planned, {} contacts", plan.len(), contacts.len()),
        });
    }
    let mut records = Vec::with_capacity(plan.len());
    for (stroke, &contact_tick) in plan.iter().zip(contacts) {
        let t0 = contact_tick as f64 * cfg.tick_period;
        let spl = readings
            .iter()
            .filter(|r| r.time > t0 && r.time <= t0 + READING_WINDOW)
            .map(|r| r.spl)
            .fold(f64::NEG_INFINITY, f64::max);
        if !spl.is_finite() {
            return Err(ExperimentError::MissingReading { contact_tick });
        }
        records.push(SweepRecord {
            velocity: stroke.velocity,
            stroke_index: stroke.stroke_index,
            spl_db: spl,
            intensity_w_m2: spl_to_intensity(spl, &cfg.acoustics),
            contact_tick,
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Repetition-rate sweep
// ---------------------------------------------------------------------------

/// Dispatch ticks for a 3 s trial at `rate_dhz` deci-Hz: stroke `n` lands on
/// the nearest tick to `n / rate`, so the integer tick grid carries the
/// fractional period honestly (intervals alternate between the two
/// neighboring tick counts).
pub fn trial_dispatch_ticks(rate_dhz: u64, tick_period: f64) -> Vec<u64> {
    let ticks_per_second = (1.0 / tick_period).round() as u64;
    let trial_ticks = (TRIAL_SECONDS / tick_period).round() as u64;
    let mut out = Vec::new();
    let mut n = 0u64;
    loop {
        // round(n * ticks_per_second * 10 / rate_dhz)
        let numer = n * ticks_per_second * 10 + rate_dhz / 2;
        let tick = numer / rate_dhz;
        if tick >= trial_ticks {
            return out;
        }
        out.push(tick);
        n += 1;
    }
}

/// Sweeps the commanded repetition rate upward in 0.1 Hz steps, 3 s per
/// trial, until a trial fails; reports the last sustained rate and how the
/// failing trial died. Each trial starts from a fresh, homed rig.
pub fn run_speed_sweep(
    cfg: &Config,
    actuator: Actuator,
    seed: u64,
) -> Result<SpeedSweepResult, ExperimentError> {
    let start_hz = match actuator {
        Actuator::Bldc => cfg.bench.bldc_start_hz,
        Actuator::Solenoid => cfg.bench.solenoid_start_hz,
    };
    let mut rate_dhz = (start_hz * 10.0).round() as u64;
    let mut trials = Vec::new();
    loop {
        let failure = match actuator {
            Actuator::Bldc => bldc_trial(cfg, rate_dhz)?,
            Actuator::Solenoid => solenoid_trial(cfg, rate_dhz, seed),
        };
        trials.push(Trial {
            rate_dhz,
            sustained: failure.is_none(),
            failure,
        });
        if let Some(mode) = failure {
            let last = trials.iter().rev().find(|t| t.sustained).ok_or(
                ExperimentError::FirstTrialFailed {
                    rate_hz: start_hz,
                },
            )?;
            let max_rate_hz = last.rate_hz();
            return Ok(SpeedSweepResult {
                trials,
                max_rate_hz,
                failure_mode: mode,
            });
        }
        rate_dhz += RATE_STEP_DHZ;
    }
}

/// One servo trial: full-velocity strokes on the sweep key at the commanded
/// rate. Fails on the first drop (fail of hit) or protection trip (power
/// cutoff), whichever the event log shows first.
fn bldc_trial(cfg: &Config, rate_dhz: u64) -> Result<Option<FailureMode>, ExperimentError> {
    let entry = *cfg
        .keymap
        .lookup(SWEEP_PITCH)
        .ok_or(ExperimentError::UnmappedSweepPitch(SWEEP_PITCH))?;
    let mut rig = Rig::new(cfg.rig_config());
    rig.park_axis(crate::gateway::axis_for_striker(entry.striker), entry.axis_position);
    rig.home_striker(entry.striker);
    let status = rig.striker(entry.striker).status();
    if status != StrikerStatus::Idle {
        return Err(ExperimentError::HomingFailed(status));
    }

    let dispatches = trial_dispatch_ticks(rate_dhz, cfg.tick_period);
    let mut next = 0usize;
    let mut contacts = 0usize;
    let end_tick = dispatches.last().copied().unwrap_or(0)
        + ((cfg.profiler.cycle_time() / cfg.tick_period).ceil() as u64)
        + 50;

    while rig.current_tick() <= end_tick {
        let now = rig.current_tick();
        while next < dispatches.len() && dispatches[next] == now {
            rig.schedule(NoteEvent {
                pitch: SWEEP_PITCH,
                velocity: 127,
                tick: now,
            })?;
            next += 1;
        }
        for event in rig.tick() {
            match event.kind {
                EventKind::StrikeContact { .. } => contacts += 1,
                EventKind::NoteDropped { reason, .. } => {
                    return Ok(Some(match reason {
                        DropReason::StrikerFaulted => FailureMode::PowerCutoff,
                        _ => FailureMode::FailOfHit,
                    }));
                }
                EventKind::Faulted { .. } => return Ok(Some(FailureMode::PowerCutoff)),
                _ => {}
            }
        }
    }
    if contacts != dispatches.len() {
        // Nothing dropped or faulted yet a stroke went missing; treat as a
        // missed hit rather than silently passing the trial.
        return Ok(Some(FailureMode::FailOfHit));
    }
    Ok(None)
}

/// One solenoid trial. Timing is purely mechanical: a stroke dispatched
/// before the previous cycle completes never reaches the key. The stroke
/// scatter (seeded per stroke) only moves impact speed, so `seed` cannot
/// change the outcome; it is threaded through for interface parity.
fn solenoid_trial(cfg: &Config, rate_dhz: u64, _seed: u64) -> Option<FailureMode> {
    let dispatches = trial_dispatch_ticks(rate_dhz, cfg.tick_period);
    let cycle = cfg.solenoid.spec.cycle_time;
    for pair in dispatches.windows(2) {
        let gap = (pair[1] - pair[0]) as f64 * cfg.tick_period;
        if gap < cycle {
            return Some(FailureMode::FailOfHit);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Intensity line fit
// ---------------------------------------------------------------------------

/// Per-velocity mean intensities, ascending by velocity.
pub fn velocity_means(records: &[SweepRecord], max_velocity: Option<u8>) -> Vec<(u8, f64)> {
    let cap = max_velocity.unwrap_or(u8::MAX);
    let mut sums: std::collections::BTreeMap<u8, (f64, u32)> = std::collections::BTreeMap::new();
    for r in records {
        if r.velocity <= cap {
            let slot = sums.entry(r.velocity).or_insert((0.0, 0));
            slot.0 += r.intensity_w_m2;
            slot.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(v, (sum, n))| (v, sum / f64::from(n)))
        .collect()
}

/// Least-squares line through the per-velocity mean intensities. Pass
/// `max_velocity` to fit only the range below an actuator's saturation
/// (the solenoid flattens above its saturation velocity).
pub fn fit_intensity_line(
    records: &[SweepRecord],
    max_velocity: Option<u8>,
) -> Result<FitResult, ExperimentError> {
    let means = velocity_means(records, max_velocity);
    if means.len() < 2 {
        return Err(ExperimentError::DegenerateFit(means.len()));
    }
    let n = means.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(v, y) in &means {
        sx += f64::from(v);
        sy += y;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(v, y) in &means {
        let dx = f64::from(v) - mx;
        sxx += dx * dx;
        sxy += dx * (y - my);
    }
    debug_assert!(sxx > 0.0, "two or more bins imply distinct velocities");
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_norm = means
        .iter()
        .map(|&(v, y)| {
            let r = y - (slope * f64::from(v) + intercept);
            r * r
        })
        .sum::<f64>()
        .sqrt();
    Ok(FitResult {
        slope,
        intercept,
        residual_norm,
        points: means.len(),
    })
}

// ---------------------------------------------------------------------------
// CSV and plot formats
// ---------------------------------------------------------------------------

pub const CSV_HEADER: &str = "velocity,stroke_index,spl_db,intensity_w_m2,contact_tick";

/// Serializes sweep records byte-stably: LF line endings, SPL at display
/// resolution, intensity in scientific notation with six significant digits.
pub fn write_sweep_csv(records: &[SweepRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 40 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{:.1},{:.5e},{}\n",
            r.velocity, r.stroke_index, r.spl_db, r.intensity_w_m2, r.contact_tick
        ));
    }
    out
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRecord>, ExperimentError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(ExperimentError::Csv {
                line: 1,
                msg: format!("bad header {header:?}"),
            });
        }
        None => {
            return Err(ExperimentError::Csv {
                line: 1,
                msg: "empty file".into(),
            });
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(ExperimentError::Csv {
                line: lineno,
                msg: format!("{} fields, expected 5", fields.len()),
            });
        }
        fn field<T: FromStr>(s: &str, line: usize, name: &str) -> Result<T, ExperimentError>
        where
            T::Err: fmt::Display,
        {
            s.parse().map_err(|e| ExperimentError::Csv {
                line,
                msg: format!("{name}: {e}"),
            })
        }
        records.push(SweepRecord {
            velocity: field(fields[0], lineno, "velocity")?,
            stroke_index: field(fields[1], lineno, "stroke_index")?,
            spl_db: field(fields[2], lineno, "spl_db")?,
            intensity_w_m2: field(fields[3], lineno, "intensity_w_m2")?,
            contact_tick: field(fields[4], lineno, "contact_tick")?,
        });
    }
    Ok(records)
}

/// Two-column plot data (velocity, per-velocity mean intensity), one point
/// per line, ready for `plot "file" with linespoints`.
pub fn write_plot_data(records: &[SweepRecord]) -> String {
    let mut out = String::from("# velocity mean_intensity_w_m2\n");
    for (v, mean) in velocity_means(records, None) {
        out.push_str(&format!("{v} {mean:.5e}\n"));
    }
    out
}
