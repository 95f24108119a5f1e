//! Thermal overcurrent protection (i^2 t style).
//!
//! Current above the nominal rating heats the winding; the accumulator
//! integrates `max(0, i^2 - i_nom^2)` and decays exponentially while the
//! motor runs cool. Crossing the limit latches a trip that only an explicit
//! reset clears, mirroring drive firmware behaviour.

use serde::Deserialize;

use crate::mallet::MotorSpec;

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OvercurrentLimit {
    /// Trip threshold for the accumulated overload (A^2 s).
    pub i2t_limit: f64,
    /// Time constant of the accumulator decay when under nominal (s).
    pub cooldown_tau: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TripState {
    pub accumulator: f64,
    pub tripped: bool,
}

impl TripState {
    pub fn reset(&mut self) {
        self.accumulator = 0.0;
        self.tripped = false;
    }
}

/// Advances the protection state by `dt` with winding current `current`.
/// Returns true while tripped.
pub fn overcurrent_check(
    trip: &mut TripState,
    current: f64,
    motor: &MotorSpec,
    dt: f64,
    limit: &OvercurrentLimit,
) -> bool {
    if trip.tripped {
        return true;
    }
    let i_nom = motor.nominal_current();
    trip.accumulator *= (-dt / limit.cooldown_tau).exp();
    let overload = current * current - i_nom * i_nom;
    if overload > 0.0 {
        trip.accumulator += overload * dt;
    }
    if trip.accumulator > limit.i2t_limit {
        trip.tripped = true;
    }
    trip.tripped
}

#[cfg(test)]
mod tests {
    use super::*;

    fn motor() -> MotorSpec {
        MotorSpec {
            torque_constant: 0.0524,
            no_load_current: 0.491,
            nominal_torque: 0.319,
            max_current: 12.0,
            rotor_inertia: 8.1e-5,
            diameter: 0.065,
            depth: 0.038,
        }
    }

    fn limit() -> OvercurrentLimit {
        OvercurrentLimit {
            i2t_limit: 0.4,
            cooldown_tau: 1.5,
        }
    }

    #[test]
    fn nominal_current_never_trips() {
        let m = motor();
        let l = limit();
        let mut trip = TripState::default();
        let i = m.nominal_current();
        for _ in 0..100_000 {
            assert!(!overcurrent_check(&mut trip, i, &m, 1e-3, &l));
        }
        assert_eq!(trip.accumulator, 0.0);
    }

    #[test]
    fn double_nominal_trips_at_predicted_time() {
        // At i = 2 i_nom the overload rate is 3 i_nom^2, so ignoring decay
        // the trip lands near limit / (3 i_nom^2). With tau = 1.5 s and a
        // trip time around 3.6 ms the decay correction is below 0.2%.
        let m = motor();
        let l = limit();
        let i_nom = m.nominal_current();
        let expected = l.i2t_limit / (3.0 * i_nom * i_nom);

        let mut trip = TripState::default();
        let dt = 1e-6;
        let mut t = 0.0;
        while !overcurrent_check(&mut trip, 2.0 * i_nom, &m, dt, &l) {
            t += dt;
            assert!(t < 1.0, "never tripped");
        }
        assert!((t - expected).abs() < expected * 0.01, "t = {t}, expected ~{expected}");
    }

    #[test]
    fn trip_latches_until_reset() {
        let m = motor();
        let l = limit();
        let mut trip = TripState::default();
        while !overcurrent_check(&mut trip, 4.0 * m.nominal_current(), &m, 1e-3, &l) {}
        // Cooling off does not clear the latch.
        for _ in 0..10_000 {
            assert!(overcurrent_check(&mut trip, 0.0, &m, 1e-3, &l));
        }
        trip.reset();
        assert!(!overcurrent_check(&mut trip, 0.0, &m, 1e-3, &l));
    }

    #[test]
    fn accumulator_decays_between_bursts() {
        let m = motor();
        let l = limit();
        let mut trip = TripState::default();
        let i = 2.0 * m.nominal_current();
        overcurrent_check(&mut trip, i, &m, 1e-3, &l);
        let after_burst = trip.accumulator;
        assert!(after_burst > 0.0);
        // One full time constant of idle reduces the stored overload to 1/e.
        let steps = 1500;
        for _ in 0..steps {
            overcurrent_check(&mut trip, 0.0, &m, 1e-3, &l);
        }
        let ratio = trip.accumulator / after_burst;
        assert!((ratio - (-1.0f64).exp()).abs() < 1e-9);
    }
}
