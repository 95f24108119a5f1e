//! Servo simulation: rigid plant, positional PID, trajectory generation,
//! current protection, and the open-loop solenoid used as a contrast
//! actuator.

mod pid;
mod plant;
mod protection;
mod solenoid;
mod trajectory;
mod tune;

pub use pid::{pid_step, PidGains, PidState};
pub use plant::{Plant, PlantState, StepResult};
pub use protection::{overcurrent_check, OvercurrentLimit, TripState};
pub use solenoid::{solenoid_step, SolenoidModel, SolenoidSpec};
pub use trajectory::{Setpoint, Trajectory};
pub use tune::{auto_tune, verify_step_response, TuneConfig, TuneError};

/// Feedforward torque that makes the plant follow a desired state exactly
/// when the model matches: inertia for the desired acceleration, plus the
/// gravity and friction the plant will see there.
pub fn tracking_feedforward(plant: &Plant, desired_pos: f64, desired_vel: f64, desired_acc: f64) -> f64 {
    plant.inertia() * desired_acc + plant.gravity_load(desired_pos)
        + plant.friction() * sign(desired_vel)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
