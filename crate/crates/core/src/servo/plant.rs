//! Rigid-body mallet plant with a hard stop at the key surface.
//!
//! Signed equation of motion in the shaft angle `theta` (rad from downward
//! vertical, positive lifts the mallet away from the key):
//!
//! ```text
//! J theta'' = tau - M_g(theta) - M_f sign(theta')
//! ```
//!
//! `M_g` pulls toward the downward vertical, so it assists a downstroke and
//! loads a lift. Integration is semi-implicit Euler: the velocity update uses
//! the current-step acceleration, the position update uses the new velocity.

use crate::mallet::{mallet_inertia, MalletGeometry, MotorSpec, StrikeConfig};

/// Plant parameters bundled once so stepping stays allocation-free.
#[derive(Debug, Clone, Copy)]
pub struct Plant {
    pub geom: MalletGeometry,
    pub motor: MotorSpec,
    pub strike: StrikeConfig,
}

/// Instantaneous plant state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    /// Shaft angle (rad from downward vertical).
    pub angle: f64,
    /// Angular velocity (rad/s).
    pub angular_velocity: f64,
    /// Current drawn by the last applied torque (A).
    pub motor_current: f64,
    /// Simulated time (s).
    pub sim_time: f64,
}

/// One integration step. `impact_speed` is set when the mallet reached the
/// key this step, carrying the speed it arrived with (the stop then zeroes
/// the velocity).
#[derive(Debug, Clone, Copy)]
pub struct StepResult {
    pub state: PlantState,
    pub impact_speed: Option<f64>,
}

impl PlantState {
    pub fn at_rest(angle: f64) -> Self {
        PlantState {
            angle,
            angular_velocity: 0.0,
            motor_current: 0.0,
            sim_time: 0.0,
        }
    }
}

impl Plant {
    /// Total inertia about the shaft: rotor plus mallet (kg m^2).
    pub fn inertia(&self) -> f64 {
        self.motor.rotor_inertia + mallet_inertia(&self.geom)
    }

    /// Gravity moment magnitude at `angle` (Nm); acts toward `theta = 0`.
    pub fn gravity_load(&self, angle: f64) -> f64 {
        crate::mallet::gravity_torque(&self.geom, angle, self.strike.gravity)
    }

    /// Kinetic friction magnitude (Nm).
    pub fn friction(&self) -> f64 {
        crate::mallet::friction_torque(&self.motor)
    }

    /// Advances the plant by `dt` under `applied_torque` (Nm, signed in the
    /// lift direction). The key surface at the contact angle is a hard stop:
    /// crossing it clamps the angle and zeroes the velocity.
    pub fn step(&self, state: &PlantState, applied_torque: f64, dt: f64) -> StepResult {
        debug_assert!(dt > 0.0);
        let friction = match state.angular_velocity {
            v if v > 0.0 => -self.friction(),
            v if v < 0.0 => self.friction(),
            _ => 0.0,
        };
        let accel =
            (applied_torque - self.gravity_load(state.angle) + friction) / self.inertia();
        let velocity = state.angular_velocity + accel * dt;
        let mut angle = state.angle + velocity * dt;
        let mut impact_speed = None;
        let mut new_velocity = velocity;
        if angle < self.strike.contact_angle {
            impact_speed = Some(velocity.abs());
            angle = self.strike.contact_angle;
            new_velocity = 0.0;
        }
        StepResult {
            state: PlantState {
                angle,
                angular_velocity: new_velocity,
                motor_current: applied_torque / self.motor.torque_constant,
                sim_time: state.sim_time + dt,
            },
            impact_speed,
        }
    }
}
