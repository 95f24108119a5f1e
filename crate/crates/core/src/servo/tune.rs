//! PID auto-tuning via relay feedback.
//!
//! A relay with hysteresis, biased by the gravity load at the test angle,
//! excites a small limit cycle around a reference point well clear of the
//! key. Dry friction makes the cycle contract to a fixed amplitude; the
//! describing function of the relay then gives the ultimate gain, and the
//! cycle period the ultimate period. Gains follow a low-overshoot
//! Ziegler-Nichols variant and are accepted only after a simulated step
//! response settles in time; failed verification backs the gains off and
//! retries.

use crate::servo::pid::{pid_step, PidGains, PidState};
use crate::servo::plant::{Plant, PlantState};

#[derive(Debug, Clone, Copy)]
pub struct TuneConfig {
    /// Relay torque amplitude (Nm). Must exceed the friction torque or the
    /// mallet never crosses the hysteresis band.
    pub relay_torque: f64,
    /// Hysteresis half-width (rad); sets the limit-cycle amplitude at
    /// roughly `hysteresis * relay_torque / friction`.
    pub hysteresis: f64,
    /// Test angle above the contact stop (rad).
    pub reference_offset: f64,
    /// Integration step for the relay phase (s).
    pub relay_dt: f64,
    /// Integration step for verification; matches the servo substep (s).
    pub verify_dt: f64,
    /// Simulated-time budget for the relay phase (s).
    pub max_time: f64,
    /// Relative agreement required between consecutive cycles.
    pub convergence_tol: f64,
    /// Consecutive agreeing cycles required.
    pub convergence_cycles: usize,
    /// Verification step size (rad).
    pub verify_step: f64,
    /// Deadline for settling into the band (s).
    pub verify_time: f64,
    /// Settle band as a fraction of the step.
    pub settle_tol: f64,
    /// Gain halvings tried when verification fails.
    pub max_backoff: u32,
}

impl Default for TuneConfig {
    fn default() -> TuneConfig {
        TuneConfig {
            relay_torque: 0.05,
            hysteresis: 1e-4,
            reference_offset: 0.3,
            relay_dt: 2e-5,
            verify_dt: 1.25e-4,
            max_time: 2.0,
            convergence_tol: 0.05,
            convergence_cycles: 3,
            verify_step: 0.02,
            verify_time: 0.015,
            settle_tol: 0.02,
            max_backoff: 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TuneError {
    #[error("relay produced no sustained oscillation: {detail}")]
    NoOscillation { detail: String },
    #[error("tuned loop failed verification: {detail}")]
    Unstable { detail: String },
}

/// Derivative-heavy Ziegler-Nichols variant: kp = 0.45 Ku, Ti = Tu/2,
/// Td = 0.4 Tu. The classic rows leave too little damping on a
/// friction-dominated rigid plant: the step response rings past the settle
/// deadline.
const RULE_KP: f64 = 0.45;
const RULE_TI: f64 = 0.5;
const RULE_TD: f64 = 0.4;

pub fn auto_tune(plant: &Plant, cfg: &TuneConfig) -> Result<PidGains, TuneError> {
    let (amplitude, period) = relay_experiment(plant, cfg)?;
    let ku = 4.0 * cfg.relay_torque / (std::f64::consts::PI * amplitude);
    let output_limit = plant.motor.torque_constant * plant.motor.max_current;

    let mut gains = PidGains {
        kp: RULE_KP * ku,
        ki: RULE_KP * ku / (RULE_TI * period),
        kd: RULE_KP * ku * RULE_TD * period,
        // The integral only has to defeat friction near zero error; a clamp
        // at the friction scale keeps windup from stretching the settle.
        integral_limit: 2.0 * plant.friction(),
        output_limit,
    };

    for backoff in 0..=cfg.max_backoff {
        match verify_step_response(plant, &gains, cfg) {
            Ok(()) => return Ok(gains),
            Err(detail) => {
                if backoff == cfg.max_backoff {
                    return Err(TuneError::Unstable { detail });
                }
                // Trade bandwidth for damping and retry.
                gains.kp *= 0.5;
                gains.ki *= 0.25;
            }
        }
    }
    unreachable!("loop returns on the last backoff");
}

/// Runs the relay limit-cycle experiment; returns (amplitude rad, period s).
fn relay_experiment(plant: &Plant, cfg: &TuneConfig) -> Result<(f64, f64), TuneError> {
    let theta_ref = plant.strike.contact_angle + cfg.reference_offset;
    let bias = plant.gravity_load(theta_ref);
    let mut state = PlantState {
        angle: theta_ref,
        angular_velocity: 0.0,
        motor_current: 0.0,
        sim_time: 0.0,
    };
    let mut relay = -1.0f64;
    // (switch time, peak |error| since the previous switch)
    let mut switches: Vec<(f64, f64)> = Vec::new();
    let mut peak = 0.0f64;
    let mut t = 0.0;

    while t < cfg.max_time {
        let torque = bias + relay * cfg.relay_torque;
        state = plant.step(&state, torque, cfg.relay_dt).state;
        t += cfg.relay_dt;
        let error = state.angle - theta_ref;
        peak = peak.max(error.abs());
        let flipped = if error > cfg.hysteresis && relay > 0.0 {
            relay = -1.0;
            true
        } else if error < -cfg.hysteresis && relay < 0.0 {
            relay = 1.0;
            true
        } else {
            false
        };
        if flipped {
            switches.push((t, peak));
            peak = 0.0;
            if let Some(result) = converged_cycle(&switches, cfg) {
                return Ok(result);
            }
        }
    }
    Err(TuneError::NoOscillation {
        detail: format!(
            "{} relay switches in {:.3} s, needed {} converged cycles",
            switches.len(),
            cfg.max_time,
            cfg.convergence_cycles
        ),
    })
}

/// Checks the trailing cycles for agreement; a cycle spans two switches of
/// the same direction.
fn converged_cycle(switches: &[(f64, f64)], cfg: &TuneConfig) -> Option<(f64, f64)> {
    let need = cfg.convergence_cycles;
    // Skip the first two switches: the cycle is still contracting.
    if switches.len() < 2 * need + 3 {
        return None;
    }
    let n = switches.len();
    let mut periods = Vec::with_capacity(need);
    let mut amps = Vec::with_capacity(need);
    for c in 0..need {
        let end = n - 1 - 2 * c;
        let start = end - 2;
        periods.push(switches[end].0 - switches[start].0);
        amps.push(switches[end].1.max(switches[end - 1].1));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let period = mean(&periods);
    let amp = mean(&amps);
    let within = |v: &[f64], m: f64| v.iter().all(|x| (x - m).abs() <= cfg.convergence_tol * m);
    if amp > 0.0 && within(&periods, period) && within(&amps, amp) {
        Some((amp, period))
    } else {
        None
    }
}

/// Simulates a gravity-compensated PID step response and checks that it
/// settles into the tolerance band before the deadline and stays there.
/// Returns a diagnostic string on failure.
pub fn verify_step_response(plant: &Plant, gains: &PidGains, cfg: &TuneConfig) -> Result<(), String> {
    let start = plant.strike.contact_angle + cfg.reference_offset;
    let setpoint = start + cfg.verify_step;
    let band = cfg.settle_tol * cfg.verify_step;
    let mut state = PlantState {
        angle: start,
        angular_velocity: 0.0,
        motor_current: 0.0,
        sim_time: 0.0,
    };
    let mut pid = PidState::default();
    // Watch well past the deadline so slow friction hunting cannot sneak
    // back out of the band unnoticed.
    let horizon = cfg.verify_time * 3.0;
    let mut t = 0.0;
    let mut last_outside = 0.0;
    while t < horizon {
        let feedback = pid_step(gains, setpoint, state.angle, cfg.verify_dt, &mut pid);
        let torque = (feedback + plant.gravity_load(state.angle))
            .clamp(-gains.output_limit, gains.output_limit);
        state = plant.step(&state, torque, cfg.verify_dt).state;
        t += cfg.verify_dt;
        let error = setpoint - state.angle;
        if !error.is_finite() || error.abs() > 3.0 * cfg.verify_step {
            return Err(format!("diverged: |error| = {:.3e} rad at t = {t:.4} s", error.abs()));
        }
        if error.abs() > band {
            last_outside = t;
        }
    }
    if last_outside >= cfg.verify_time {
        return Err(format!(
            "still outside the {:.1}% band at t = {last_outside:.4} s (deadline {:.4} s)",
            cfg.settle_tol * 100.0,
            cfg.verify_time
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mallet::{MalletGeometry, MotorSpec, StrikeConfig};

    fn reference_plant() -> Plant {
        Plant {
            geom: MalletGeometry {
                ball_radius: 0.010,
                ball_mass: 0.017871745,
                rod_length: 0.100,
                rod_mass: 0.006,
            },
            motor: MotorSpec {
                torque_constant: 0.0524,
                no_load_current: 0.491,
                nominal_torque: 0.319,
                max_current: 12.0,
                rotor_inertia: 8.1e-5,
                diameter: 0.065,
                depth: 0.038,
            },
            strike: StrikeConfig {
                contact_angle: std::f64::consts::FRAC_PI_2,
                gravity: 9.81,
            },
        }
    }

    #[test]
    fn reference_plant_tunes_to_finite_stable_gains() {
        let plant = reference_plant();
        let cfg = TuneConfig::default();
        let gains = auto_tune(&plant, &cfg).unwrap();
        for g in [gains.kp, gains.ki, gains.kd] {
            assert!(g.is_finite() && g > 0.0);
        }
        assert_eq!(
            gains.output_limit,
            plant.motor.torque_constant * plant.motor.max_current
        );
        // The friction-bounded limit cycle pins the ultimate gain near
        // 4 M_f / (pi h), independent of relay amplitude.
        let mf = plant.friction();
        let ku_expected = 4.0 * mf / (std::f64::consts::PI * cfg.hysteresis);
        let ku = gains.kp / RULE_KP;
        assert!(
            (ku - ku_expected).abs() < 0.15 * ku_expected,
            "Ku = {ku}, expected near {ku_expected}"
        );
    }

    #[test]
    fn shipped_gains_settle_a_step_before_the_travel_deadline() {
        // The gains baked into the reference rig must park a step inside the
        // 2% band within one travel time and stay there.
        let cfg = crate::config::Config::reference();
        verify_step_response(&cfg.plant, &cfg.gains, &TuneConfig::default()).unwrap();
    }

    #[test]
    fn tuning_is_deterministic() {
        let plant = reference_plant();
        let cfg = TuneConfig::default();
        let a = auto_tune(&plant, &cfg).unwrap();
        let b = auto_tune(&plant, &cfg).unwrap();
        assert_eq!(a.kp.to_bits(), b.kp.to_bits());
        assert_eq!(a.ki.to_bits(), b.ki.to_bits());
        assert_eq!(a.kd.to_bits(), b.kd.to_bits());
    }

    #[test]
    fn tiny_inertia_plant_tunes() {
        let mut plant = reference_plant();
        plant.geom.ball_mass = 0.0;
        plant.geom.rod_mass = 0.0;
        plant.motor.rotor_inertia = 1e-5;
        let cfg = TuneConfig {
            relay_dt: 5e-6,
            ..TuneConfig::default()
        };
        let gains = auto_tune(&plant, &cfg).unwrap();
        assert!(gains.kp.is_finite() && gains.kp > 0.0);
    }

    #[test]
    fn doubled_inertia_retunes_stable() {
        let mut plant = reference_plant();
        plant.motor.rotor_inertia += crate::mallet::mallet_inertia(&plant.geom);
        // Total inertia is now twice the reference.
        auto_tune(&plant, &TuneConfig::default()).unwrap();
    }

    #[test]
    fn relay_weaker_than_friction_reports_no_oscillation() {
        let plant = reference_plant();
        let cfg = TuneConfig {
            relay_torque: 1e-6,
            max_time: 0.5,
            ..TuneConfig::default()
        };
        match auto_tune(&plant, &cfg) {
            Err(TuneError::NoOscillation { .. }) => {}
            other => panic!("expected NoOscillation, got {other:?}"),
        }
    }

    #[test]
    fn verification_rejects_wild_gains() {
        let plant = reference_plant();
        let cfg = TuneConfig::default();
        let gains = PidGains {
            kp: 1e7,
            ki: 1e9,
            kd: 0.0,
            integral_limit: 0.3,
            output_limit: 0.6288,
        };
        assert!(verify_step_response(&plant, &gains, &cfg).is_err());
    }
}
