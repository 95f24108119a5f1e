//! Setpoint trajectories executed by the servo.
//!
//! A strike command carries an acceleration `a` and the constant travel time
//! `T`. The executed setpoint is the cubic that leaves the current state at
//! rest and meets the key surface at exactly `t = T` moving at `a T`; loud
//! strikes wind up above the rest angle first, soft ones descend directly.
//! This realizes the commanded constant-travel-time contract: contact timing
//! is independent of velocity while impact speed scales with it. Past `T`
//! the setpoint continues into the stop at the impact speed so the hard stop,
//! not the profile, terminates the stroke.
//!
//! Lifts are rest-to-rest smoothsteps; holds pin the current angle.

use crate::profile::{MotionProfile, StrokeDirection};

#[derive(Debug, Clone, Copy)]
pub enum Trajectory {
    Strike {
        contact: f64,
        /// Local time at which the setpoint reaches contact (s).
        travel_time: f64,
        /// Speed at the key, `a T` of the originating profile (rad/s).
        impact_speed: f64,
        c0: f64,
        c1: f64,
        c2: f64,
        c3: f64,
    },
    Lift {
        start: f64,
        end: f64,
        duration: f64,
    },
    Hold {
        angle: f64,
    },
}

/// Desired kinematic state at one instant.
#[derive(Debug, Clone, Copy)]
pub struct Setpoint {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl Trajectory {
    /// Strike setpoint from rest at `start` to the key at `contact`.
    pub fn strike(profile: &MotionProfile, start: f64, contact: f64) -> Trajectory {
        debug_assert_eq!(profile.direction, StrokeDirection::Strike);
        let speed = profile.acceleration * profile.travel_time;
        Trajectory::strike_from(start, 0.0, contact, speed, profile.travel_time)
    }

    /// Strike segment from an arbitrary state `(p0, v0)` that still meets the
    /// key at `impact_speed` after `remaining` seconds. Used both for fresh
    /// strokes and for mid-stroke replanning.
    pub fn strike_from(p0: f64, v0: f64, contact: f64, impact_speed: f64, remaining: f64) -> Trajectory {
        debug_assert!(remaining > 0.0);
        let tau = remaining;
        let delta = contact - p0 - v0 * tau;
        let dv = -impact_speed - v0;
        Trajectory::Strike {
            contact,
            travel_time: tau,
            impact_speed,
            c0: p0,
            c1: v0,
            c2: (3.0 * delta - dv * tau) / (tau * tau),
            c3: (dv * tau - 2.0 * delta) / (tau * tau * tau),
        }
    }

    pub fn lift(start: f64, end: f64, duration: f64) -> Trajectory {
        debug_assert!(duration > 0.0);
        Trajectory::Lift { start, end, duration }
    }

    pub fn hold(angle: f64) -> Trajectory {
        Trajectory::Hold { angle }
    }

    /// Time after which the trajectory has done its work (strikes keep
    /// driving into the stop past this point; holds never finish).
    pub fn nominal_duration(&self) -> Option<f64> {
        match *self {
            Trajectory::Strike { travel_time, .. } => Some(travel_time),
            Trajectory::Lift { duration, .. } => Some(duration),
            Trajectory::Hold { .. } => None,
        }
    }

    /// Samples the desired state at local time `t` (s since the trajectory
    /// started).
    pub fn sample(&self, t: f64) -> Setpoint {
        match *self {
            Trajectory::Strike {
                contact,
                travel_time,
                impact_speed,
                c0,
                c1,
                c2,
                c3,
            } => {
                if t <= travel_time {
                    Setpoint {
                        position: c0 + c1 * t + c2 * t * t + c3 * t * t * t,
                        velocity: c1 + 2.0 * c2 * t + 3.0 * c3 * t * t,
                        acceleration: 2.0 * c2 + 6.0 * c3 * t,
                    }
                } else {
                    // Constant speed into the stop until the plant reports
                    // contact.
                    Setpoint {
                        position: contact - impact_speed * (t - travel_time),
                        velocity: -impact_speed,
                        acceleration: 0.0,
                    }
                }
            }
            Trajectory::Lift { start, end, duration } => {
                let s = (t / duration).clamp(0.0, 1.0);
                let delta = end - start;
                Setpoint {
                    position: start + delta * (3.0 * s * s - 2.0 * s * s * s),
                    velocity: delta * 6.0 * (s - s * s) / duration,
                    acceleration: delta * 6.0 * (1.0 - 2.0 * s) / (duration * duration),
                }
            }
            Trajectory::Hold { angle } => Setpoint {
                position: angle,
                velocity: 0.0,
                acceleration: 0.0,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{make_strike_profile, ProfilerConfig};
    use approx::assert_relative_eq;

    fn cfg() -> ProfilerConfig {
        ProfilerConfig {
            accel_min: 0.274,
            accel_max: 250.0,
            travel_time: 0.015,
            lift_time: 0.0154,
            default_position: std::f64::consts::FRAC_PI_2 + 2.5e-5,
            contact_position: std::f64::consts::FRAC_PI_2,
        }
    }

    #[test]
    fn strike_meets_key_at_travel_time_with_commanded_speed() {
        let c = cfg();
        for vel in [1u8, 2, 33, 64, 100, 127] {
            let p = make_strike_profile(vel, &c).unwrap();
            let traj = Trajectory::strike(&p, c.default_position, c.contact_position);
            let end = traj.sample(p.travel_time);
            assert_relative_eq!(end.position, c.contact_position, epsilon = 1e-12);
            assert_relative_eq!(
                end.velocity,
                -p.acceleration * p.travel_time,
                epsilon = 1e-9
            );
            let start = traj.sample(0.0);
            assert_relative_eq!(start.position, c.default_position, epsilon = 1e-15);
            assert_eq!(start.velocity, 0.0);
        }
    }

    #[test]
    fn strike_setpoint_stays_at_or_above_key_until_contact() {
        let c = cfg();
        for vel in [1u8, 40, 127] {
            let p = make_strike_profile(vel, &c).unwrap();
            let traj = Trajectory::strike(&p, c.default_position, c.contact_position);
            for i in 0..1000 {
                let t = p.travel_time * f64::from(i) / 1000.0;
                assert!(
                    traj.sample(t).position >= c.contact_position - 1e-12,
                    "vel {vel} dips below key at t = {t}"
                );
            }
        }
    }

    #[test]
    fn loud_strikes_wind_up_before_descending() {
        let c = cfg();
        let p = make_strike_profile(127, &c).unwrap();
        let traj = Trajectory::strike(&p, c.default_position, c.contact_position);
        let mid = traj.sample(p.travel_time * 0.4);
        assert!(mid.position > c.default_position);
    }

    #[test]
    fn post_travel_setpoint_drives_into_the_stop() {
        let c = cfg();
        let p = make_strike_profile(64, &c).unwrap();
        let traj = Trajectory::strike(&p, c.default_position, c.contact_position);
        let after = traj.sample(p.travel_time + 1e-3);
        assert!(after.position < c.contact_position);
        assert_relative_eq!(
            after.velocity,
            -p.acceleration * p.travel_time,
            epsilon = 1e-12
        );
    }

    #[test]
    fn replanned_segment_hits_same_terminal_state() {
        let c = cfg();
        let p = make_strike_profile(90, &c).unwrap();
        let speed = p.acceleration * p.travel_time;
        // Perturbed mid-stroke state, half the time left.
        let traj = Trajectory::strike_from(
            c.default_position + 0.002,
            -0.8 * speed,
            c.contact_position,
            speed,
            p.travel_time / 2.0,
        );
        let end = traj.sample(p.travel_time / 2.0);
        assert_relative_eq!(end.position, c.contact_position, epsilon = 1e-12);
        assert_relative_eq!(end.velocity, -speed, epsilon = 1e-9);
    }

    #[test]
    fn lift_is_rest_to_rest() {
        let c = cfg();
        let traj = Trajectory::lift(c.contact_position, c.default_position, c.lift_time);
        let start = traj.sample(0.0);
        let end = traj.sample(c.lift_time);
        assert_eq!(start.velocity, 0.0);
        assert_relative_eq!(end.position, c.default_position, epsilon = 1e-15);
        assert_relative_eq!(end.velocity, 0.0, epsilon = 1e-12);
        // Peak acceleration of the smoothstep is 6 d / t^2, at the endpoints.
        let peak = 6.0 * c.stroke_depth() / (c.lift_time * c.lift_time);
        assert_relative_eq!(start.acceleration, peak, epsilon = 1e-9);
    }
}
