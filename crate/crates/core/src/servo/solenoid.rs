//! Open-loop solenoid actuator used as the contrast baseline.
//!
//! No position feedback and bang-bang drive: commanded velocity maps
//! affinely onto plunger speed until the drive saturates, every stroke is
//! scattered by multiplicative lognormal noise, and a mechanical floor keeps
//! the quietest stroke audible. Impact speed is the whole model; timing is
//! handled by the bench around a fixed mechanical cycle time.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolenoidSpec {
    /// Plunger torque about the key hinge at full drive (Nm).
    pub max_force_torque: f64,
    /// Commanded velocity at which drive force saturates.
    pub saturation_velocity: u8,
    /// Sigma of the multiplicative lognormal stroke scatter.
    pub noise_sigma: f64,
    /// Quietest stroke the mechanism produces (dB SPL).
    pub min_spl_floor: f64,
    /// Impact speed per unit drive torque ((rad/s)/Nm).
    pub impulse_gain: f64,
    /// Plunger extension time from dispatch to key contact (s).
    pub travel_time: f64,
    /// Full stroke cycle, extension plus spring return; a stroke dispatched
    /// before the previous cycle completes is lost (s).
    pub cycle_time: f64,
}

impl SolenoidSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=127).contains(&self.saturation_velocity) {
            return Err(format!(
                "saturation_velocity {} outside 1..=127",
                self.saturation_velocity
            ));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        for (name, v) in [
            ("max_force_torque", self.max_force_torque),
            ("impulse_gain", self.impulse_gain),
            ("travel_time", self.travel_time),
            ("cycle_time", self.cycle_time),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} {v} must be positive"));
            }
        }
        if self.travel_time >= self.cycle_time {
            return Err(format!(
                "travel_time {} must be shorter than cycle_time {}",
                self.travel_time, self.cycle_time
            ));
        }
        Ok(())
    }

    /// Plunger speed at saturated drive (rad/s equivalent at the key).
    pub fn saturated_speed(&self) -> f64 {
        self.max_force_torque * self.impulse_gain
    }
}

/// Spec plus the floor speed, which depends on the acoustic coupling and is
/// derived when the config is assembled (floor SPL -> intensity -> speed).
#[derive(Debug, Clone, Copy)]
pub struct SolenoidModel {
    pub spec: SolenoidSpec,
    /// Impact speed that lands at `min_spl_floor` on the meter (rad/s).
    pub floor_speed: f64,
}

impl SolenoidModel {
    pub fn new(spec: SolenoidSpec, floor_speed: f64) -> SolenoidModel {
        debug_assert!(floor_speed > 0.0 && floor_speed < spec.saturated_speed());
        SolenoidModel { spec, floor_speed }
    }

    /// Noise-free speed for a commanded velocity.
    pub fn nominal_speed(&self, velocity: u8) -> f64 {
        let sat = self.spec.saturation_velocity;
        if velocity >= sat {
            return self.spec.saturated_speed();
        }
        let span = self.spec.saturated_speed() - self.floor_speed;
        self.floor_speed + span * f64::from(velocity - 1) / f64::from(sat - 1)
    }
}

/// Impact speed of one solenoid stroke. Seeded per stroke so sweeps are
/// reproducible independent of trial order.
pub fn solenoid_step(model: &SolenoidModel, velocity: u8, rng_seed: u64) -> f64 {
    debug_assert!((1..=127).contains(&velocity));
    let nominal = model.nominal_speed(velocity);
    let sigma = model.spec.noise_sigma;
    let factor = if sigma == 0.0 {
        1.0
    } else {
        // mu = -sigma^2/2 keeps the mean multiplier at exactly 1.
        let dist = LogNormal::new(-sigma * sigma / 2.0, sigma).expect("sigma validated");
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        dist.sample(&mut rng)
    };
    (nominal * factor).max(model.floor_speed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> SolenoidSpec {
        SolenoidSpec {
            max_force_torque: 3.2,
            saturation_velocity: 80,
            noise_sigma: 0.15,
            min_spl_floor: 73.0,
            impulse_gain: 1.0,
            travel_time: 0.010,
            cycle_time: 0.120,
        }
    }

    fn model() -> SolenoidModel {
        SolenoidModel::new(spec(), 0.4)
    }

    #[test]
    fn noiseless_below_saturation_is_affine() {
        let mut m = model();
        m.spec.noise_sigma = 0.0;
        let span = m.spec.saturated_speed() - m.floor_speed;
        assert_relative_eq!(solenoid_step(&m, 1, 7), 0.4, epsilon = 1e-15);
        assert_relative_eq!(
            solenoid_step(&m, 40, 7),
            0.4 + span * 39.0 / 79.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(solenoid_step(&m, 80, 7), m.spec.saturated_speed(), epsilon = 1e-15);
    }

    #[test]
    fn saturated_commands_share_one_mean() {
        let m = model();
        let mean_at = |vel: u8| -> f64 {
            (0..400).map(|i| solenoid_step(&m, vel, 1000 + i)).sum::<f64>() / 400.0
        };
        let m90 = mean_at(90);
        let m127 = mean_at(127);
        // Same seeds, same nominal: identical draws, not merely close.
        assert_eq!(m90, m127);
        assert_relative_eq!(m90, m.spec.saturated_speed(), max_relative = 0.05);
    }

    #[test]
    fn noise_scatter_has_unit_mean_and_positive_spread() {
        let m = model();
        let samples: Vec<f64> = (0..2000).map(|i| solenoid_step(&m, 64, i)).collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        assert_relative_eq!(mean, m.nominal_speed(64), max_relative = 0.02);
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        assert!(var > 0.0);
    }

    #[test]
    fn floor_clamps_quiet_outliers() {
        let m = model();
        let mut clamped = 0usize;
        for i in 0..500 {
            let s = solenoid_step(&m, 1, i);
            assert!(s >= m.floor_speed);
            if s == m.floor_speed {
                clamped += 1;
            }
        }
        // Nominal at vel 1 sits on the floor, so roughly half the lognormal
        // draws land below it and clamp.
        assert!(clamped > 100, "only {clamped} strokes clamped");
    }

    #[test]
    fn same_seed_same_stroke() {
        let m = model();
        assert_eq!(solenoid_step(&m, 33, 42), solenoid_step(&m, 33, 42));
        assert_ne!(solenoid_step(&m, 33, 42), solenoid_step(&m, 33, 43));
    }

    #[test]
    fn validation_rejects_bad_saturation() {
        let mut s = spec();
        s.saturation_velocity = 0;
        assert!(s.validate().is_err());
        s.saturation_velocity = 128;
        assert!(s.validate().is_err());
        let mut s2 = spec();
        s2.noise_sigma = -0.1;
        assert!(s2.validate().is_err());
    }
}
