//! Positional PID with integral anti-windup and output clamping.

/// PID gains and clamps. `output_limit` must not exceed what the drive
/// current limit can deliver (`k_m * max_current`).
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    /// Proportional gain (Nm/rad).
    pub kp: f64,
    /// Integral gain (Nm/(rad s)).
    pub ki: f64,
    /// Derivative gain (Nm s/rad).
    pub kd: f64,
    /// Clamp on the accumulated integral term (Nm).
    pub integral_limit: f64,
    /// Clamp on the controller output (Nm).
    pub output_limit: f64,
}

/// Controller memory between steps.
#[derive(Debug, Clone, Copy, Default)]
pub struct PidState {
    /// Accumulated integral term (Nm).
    pub integral: f64,
    prev_error: f64,
    primed: bool,
}

impl PidState {
    pub fn reset(&mut self) {
        *self = PidState::default();
    }
}

/// One controller update. The derivative acts on the error; the first step
/// after a reset contributes no derivative kick.
pub fn pid_step(gains: &PidGains, setpoint: f64, measured: f64, dt: f64, state: &mut PidState) -> f64 {
    debug_assert!(dt > 0.0);
    let error = setpoint - measured;
    state.integral = (state.integral + gains.ki * error * dt)
        .clamp(-gains.integral_limit, gains.integral_limit);
    let derivative = if state.primed {
        (error - state.prev_error) / dt
    } else {
        state.primed = true;
        0.0
    };
    state.prev_error = error;
    (gains.kp * error + state.integral + gains.kd * derivative)
        .clamp(-gains.output_limit, gains.output_limit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gains() -> PidGains {
        PidGains {
            kp: 2.0,
            ki: 10.0,
            kd: 0.01,
            integral_limit: 0.3,
            output_limit: 0.6288,
        }
    }

    #[test]
    fn zero_error_zero_history_gives_zero_output() {
        let mut state = PidState::default();
        let out = pid_step(&gains(), 1.0, 1.0, 1e-4, &mut state);
        assert_eq!(out, 0.0);
    }

    #[test]
    fn pure_proportional_matches_kp_times_error() {
        let g = PidGains {
            ki: 0.0,
            kd: 0.0,
            ..gains()
        };
        let mut state = PidState::default();
        let out = pid_step(&g, 0.2, 0.05, 1e-4, &mut state);
        assert_relative_eq!(out, 2.0 * 0.15, epsilon = 1e-12);
    }

    #[test]
    fn integral_saturates_at_clamp() {
        let g = gains();
        let mut state = PidState::default();
        for _ in 0..1_000_000 {
            pid_step(&g, 1.0, 0.0, 1e-3, &mut state);
        }
        assert_eq!(state.integral, g.integral_limit);
        // Error flips: the integral must wind back down, not stick.
        for _ in 0..1_000_000 {
            pid_step(&g, 0.0, 1.0, 1e-3, &mut state);
        }
        assert_eq!(state.integral, -g.integral_limit);
    }

    #[test]
    fn output_respects_clamp() {
        let g = gains();
        let mut state = PidState::default();
        let out = pid_step(&g, 100.0, 0.0, 1e-4, &mut state);
        assert_eq!(out, g.output_limit);
        let out = pid_step(&g, -100.0, 0.0, 1e-4, &mut state);
        assert_eq!(out, -g.output_limit);
    }

    #[test]
    fn first_step_has_no_derivative_kick() {
        let g = PidGains {
            kp: 0.0,
            ki: 0.0,
            kd: 1.0,
            ..gains()
        };
        let mut state = PidState::default();
        let out = pid_step(&g, 1.0, 0.0, 1e-4, &mut state);
        assert_eq!(out, 0.0);
        // Second step with unchanged error: derivative stays zero.
        let out = pid_step(&g, 1.0, 0.0, 1e-4, &mut state);
        assert_eq!(out, 0.0);
    }
}
