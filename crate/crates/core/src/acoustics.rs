//! Impact-to-sound mapping and the SPL meter emulation.
//!
//! An impact excites its bar, which rings with an exponentially decaying
//! intensity envelope; the meter power-sums that signal with room noise,
//! applies SLOW exponential time averaging, and reports a reading every
//! sample period, quantized to the 0.1 dB display step. Intensity is linear
//! in impact speed, so the whole stack composed with the affine
//! velocity-to-acceleration map stays linear in MIDI velocity.

use serde::Deserialize;

/// Point on the intensity timeline handed to the meter (signal only; the
/// meter adds room noise itself).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensitySample {
    pub time: f64,
    pub intensity: f64,
}

/// One meter display emission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplReading {
    pub time: f64,
    pub spl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcousticConfig {
    /// SPL reference (W/m^2); 1e-12 corresponds to the 20 uPa pressure
    /// reference.
    pub reference_intensity: f64,
    /// Steady room noise floor (dB).
    pub room_noise_db: f64,
    /// Intensity produced per unit impact speed (W/m^2 per rad/s).
    pub coupling_k: f64,
    /// SLOW weighting time constant (s).
    pub meter_time_constant: f64,
    /// Meter display emission period (s).
    pub sample_period: f64,
    /// Struck-bar ring-down time constant (s).
    pub ring_tau: f64,
}

impl AcousticConfig {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("reference_intensity", self.reference_intensity),
            ("coupling_k", self.coupling_k),
            ("meter_time_constant", self.meter_time_constant),
            ("sample_period", self.sample_period),
            ("ring_tau", self.ring_tau),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(format!("{name} = {value} must be positive"));
            }
        }
        if !self.room_noise_db.is_finite() {
            return Err(format!("room_noise_db = {}", self.room_noise_db));
        }
        Ok(())
    }

    pub fn room_intensity(&self) -> f64 {
        spl_to_intensity(self.room_noise_db, self)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AcousticsError {
    #[error("intensity {0} W/m^2 is not positive; SPL undefined")]
    NonPositiveIntensity(f64),
    #[error("sample {index} at t = {time} precedes t = {prev}")]
    UnorderedSamples { index: usize, time: f64, prev: f64 },
    #[error("sample {index} carries invalid intensity {intensity}")]
    BadSample { index: usize, intensity: f64 },
}

/// Linear acoustic coupling: intensity radiated per unit impact speed.
pub fn impact_to_intensity(impact_speed: f64, cfg: &AcousticConfig) -> f64 {
    debug_assert!(impact_speed >= 0.0);
    cfg.coupling_k * impact_speed
}

pub fn intensity_to_spl(intensity: f64, cfg: &AcousticConfig) -> Result<f64, AcousticsError> {
    if !(intensity > 0.0) {
        return Err(AcousticsError::NonPositiveIntensity(intensity));
    }
    Ok(10.0 * (intensity / cfg.reference_intensity).log10())
}

pub fn spl_to_intensity(spl: f64, cfg: &AcousticConfig) -> f64 {
    cfg.reference_intensity * 10f64.powf(spl / 10.0)
}

/// Display quantization: SPL meters report in 0.1 dB steps.
pub fn quantize_db(spl: f64) -> f64 {
    (spl * 10.0).round() / 10.0
}

/// Ringing-bar intensity state. Strikes power-sum onto whatever is still
/// ringing; the envelope decays exponentially.
#[derive(Debug, Clone, Copy, Default)]
pub struct BarRing {
    intensity: f64,
}

impl BarRing {
    pub fn strike(&mut self, intensity: f64) {
        self.intensity += intensity;
    }

    /// Advances the ring-down by `dt` and returns the current intensity.
    pub fn step(&mut self, dt: f64, cfg: &AcousticConfig) -> f64 {
        self.intensity *= (-dt / cfg.ring_tau).exp();
        self.intensity
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }
}

/// SLOW-weighted SPL meter. Internal state is the exponentially averaged
/// total intensity (signal plus room noise), initialized at the room floor
/// so an idle meter reads the room level from the first emission.
#[derive(Debug, Clone)]
pub struct SplMeter {
    cfg: AcousticConfig,
    level: f64,
    time: f64,
    next_emit: f64,
    index: usize,
}

impl SplMeter {
    pub fn new(cfg: AcousticConfig) -> SplMeter {
        let level = cfg.room_intensity();
        let next_emit = cfg.sample_period;
        SplMeter { cfg, level, time: 0.0, next_emit, index: 0 }
    }

    /// Feeds one signal sample whose intensity is held over the interval
    /// ending at `sample.time`. Returns any display emissions the interval
    /// crossed.
    pub fn feed(&mut self, sample: IntensitySample) -> Result<Vec<SplReading>, AcousticsError> {
        if !(sample.intensity >= 0.0) || !sample.intensity.is_finite() {
            return Err(AcousticsError::BadSample {
                index: self.index,
                intensity: sample.intensity,
            });
        }
        if sample.time <= self.time {
            return Err(AcousticsError::UnorderedSamples {
                index: self.index,
                time: sample.time,
                prev: self.time,
            });
        }
        self.index += 1;
        let input = self.cfg.room_intensity() + sample.intensity;
        let mut out = Vec::new();
        // Split the interval at every display boundary it crosses so each
        // emission reads the averaged level at exactly its boundary.
        while self.next_emit <= sample.time {
            let dt = self.next_emit - self.time;
            self.advance(input, dt);
            self.time = self.next_emit;
            out.push(SplReading {
                time: self.time,
                spl: quantize_db(
                    intensity_to_spl(self.level, &self.cfg).expect("level stays positive"),
                ),
            });
            self.next_emit += self.cfg.sample_period;
        }
        let dt = sample.time - self.time;
        if dt > 0.0 {
            self.advance(input, dt);
            self.time = sample.time;
        }
        Ok(out)
    }

    fn advance(&mut self, input: f64, dt: f64) {
        let alpha = 1.0 - (-dt / self.cfg.meter_time_constant).exp();
        self.level += (input - self.level) * alpha;
    }

    /// Unquantized instantaneous level (dB), for diagnostics.
    pub fn level_db(&self) -> f64 {
        intensity_to_spl(self.level, &self.cfg).expect("level stays positive")
    }
}

/// Batch form: runs a whole time-ordered signal stream through the meter.
pub fn meter_process(
    samples: &[IntensitySample],
    cfg: &AcousticConfig,
) -> Result<Vec<SplReading>, AcousticsError> {
    let mut meter = SplMeter::new(*cfg);
    let mut out = Vec::new();
    for sample in samples {
        out.append(&mut meter.feed(*sample)?);
    }
    Ok(out)
}
