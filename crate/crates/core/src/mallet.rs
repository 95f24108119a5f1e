//! Static torque balance and inertia for a motor-driven mallet.
//!
//! The mallet is modeled as a rigid rod of mass `m_s` hinged at the motor
//! shaft with a ball of mass `m_b` at the tip. Angles are measured from the
//! downward vertical, so `sin(theta)` scales the gravity moment and the key
//! surface sits at the contact angle.
//!
//! Downstroke torque balance about the shaft:
//!
//! ```text
//! M_d = M_m + M_g - M_f
//! ```
//!
//! where `M_m` is motor output, `M_g = [m_b (R + L) + m_s L / 2] sin(theta) g`
//! is the gravity assist and `M_f = k_m I_0` is the friction loss expressed
//! through the no-load current.

/// Mallet link parameters. Lengths in m, masses in kg.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalletGeometry {
    /// Ball (head) radius R.
    pub ball_radius: f64,
    /// Ball mass m_b, treated as a point mass at the tip.
    pub ball_mass: f64,
    /// Rod length L from shaft to ball center minus R.
    pub rod_length: f64,
    /// Rod mass m_s, uniform along its length.
    pub rod_mass: f64,
}

/// Motor parameters taken from a datasheet.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorSpec {
    /// Torque constant k_m (Nm/A).
    pub torque_constant: f64,
    /// No-load current I_0 (A); k_m * I_0 is the friction torque.
    pub no_load_current: f64,
    /// Continuous (nominal) torque rating (Nm).
    pub nominal_torque: f64,
    /// Drive current limit (A).
    pub max_current: f64,
    /// Rotor inertia (kg m^2).
    pub rotor_inertia: f64,
    /// Housing diameter (m).
    pub diameter: f64,
    /// Housing depth (m).
    pub depth: f64,
}

/// Strike-side constants shared by the torque balance and the plant.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
pub struct StrikeConfig {
    /// Mallet angle at key contact (rad from downward vertical).
    pub contact_angle: f64,
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
}

/// Mechanical envelope available for the motor.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub max_diameter: f64,
    pub max_depth: f64,
}

/// Outcome of checking a motor against a required downstroke torque.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    /// Motor torque needed to deliver the requested downstroke torque.
    pub required_torque: f64,
    pub torque_ok: bool,
    pub fits_envelope: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParamError {
    #[error("{name} must be finite and > 0, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("ball radius {radius} must be smaller than rod length {length}")]
    BallLargerThanRod { radius: f64, length: f64 },
    #[error("nominal torque {nominal} exceeds k_m * max_current = {ceiling}")]
    NominalOverCurrentLimit { nominal: f64, ceiling: f64 },
    #[error("contact angle {0} outside [0, pi]")]
    ContactAngle(f64),
}

impl MalletGeometry {
    /// Checks the invariants expected of a configured mallet. The torque and
    /// inertia functions themselves accept any finite values (zero masses are
    /// useful in tests).
    pub fn validate(&self) -> Result<(), ParamError> {
        for (name, value) in [
            ("ball_radius", self.ball_radius),
            ("ball_mass", self.ball_mass),
            ("rod_length", self.rod_length),
            ("rod_mass", self.rod_mass),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(ParamError::NonPositive { name, value });
            }
        }
        if self.ball_radius >= self.rod_length {
            return Err(ParamError::BallLargerThanRod {
                radius: self.ball_radius,
                length: self.rod_length,
            });
        }
        Ok(())
    }

    /// First moment of mass about the shaft: `m_b (R + L) + m_s L / 2` (kg m).
    pub fn mass_moment(&self) -> f64 {
        self.ball_mass * (self.ball_radius + self.rod_length)
            + self.rod_mass * self.rod_length / 2.0
    }
}

impl MotorSpec {
    pub fn validate(&self) -> Result<(), ParamError> {
        for (name, value) in [
            ("torque_constant", self.torque_constant),
            ("no_load_current", self.no_load_current),
            ("nominal_torque", self.nominal_torque),
            ("max_current", self.max_current),
            ("rotor_inertia", self.rotor_inertia),
            ("diameter", self.diameter),
            ("depth", self.depth),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(ParamError::NonPositive { name, value });
            }
        }
        let ceiling = self.torque_constant * self.max_current;
        if self.nominal_torque > ceiling {
            return Err(ParamError::NominalOverCurrentLimit {
                nominal: self.nominal_torque,
                ceiling,
            });
        }
        Ok(())
    }

    /// Current drawn at the nominal torque rating (A).
    pub fn nominal_current(&self) -> f64 {
        self.nominal_torque / self.torque_constant
    }
}

impl StrikeConfig {
    pub fn validate(&self) -> Result<(), ParamError> {
        if !self.contact_angle.is_finite()
            || !(0.0..=std::f64::consts::PI).contains(&self.contact_angle)
        {
            return Err(ParamError::ContactAngle(self.contact_angle));
        }
        if !self.gravity.is_finite() || self.gravity <= 0.0 {
            return Err(ParamError::NonPositive {
                name: "gravity",
                value: self.gravity,
            });
        }
        Ok(())
    }
}

/// Gravity moment about the shaft at mallet angle `theta` (Nm, >= 0 on
/// [0, pi]). Acts toward the downward vertical, assisting a downstroke.
pub fn gravity_torque(geom: &MalletGeometry, theta: f64, gravity: f64) -> f64 {
    geom.mass_moment() * theta.sin() * gravity
}

/// Friction torque `k_m * I_0` (Nm).
pub fn friction_torque(motor: &MotorSpec) -> f64 {
    motor.torque_constant * motor.no_load_current
}

/// Motor torque needed so the downstroke delivers `downstroke_torque` at the
/// contact angle: `M_m = M_d - M_g(theta_c) + M_f`.
pub fn required_motor_torque(
    downstroke_torque: f64,
    geom: &MalletGeometry,
    motor: &MotorSpec,
    strike: &StrikeConfig,
) -> f64 {
    downstroke_torque - gravity_torque(geom, strike.contact_angle, strike.gravity)
        + friction_torque(motor)
}

/// Torque delivered to the key for a given motor torque at angle `theta`:
/// `M_d = M_m + M_g - M_f`. Inverse of [`required_motor_torque`].
pub fn net_downstroke_torque(
    motor_torque: f64,
    geom: &MalletGeometry,
    motor: &MotorSpec,
    theta: f64,
    gravity: f64,
) -> f64 {
    motor_torque + gravity_torque(geom, theta, gravity) - friction_torque(motor)
}

/// Mallet inertia about the shaft: point ball at the tip plus a uniform rod
/// about its end, `m_b (R + L)^2 + m_s L^2 / 3` (kg m^2).
pub fn mallet_inertia(geom: &MalletGeometry) -> f64 {
    let tip = geom.ball_radius + geom.rod_length;
    geom.ball_mass * tip * tip + geom.rod_mass * geom.rod_length * geom.rod_length / 3.0
}

/// Checks whether `motor` can deliver `downstroke_torque` at contact and fit
/// the mounting envelope.
pub fn feasibility_check(
    motor: &MotorSpec,
    geom: &MalletGeometry,
    strike: &StrikeConfig,
    downstroke_torque: f64,
    envelope: &Envelope,
) -> FeasibilityReport {
    let required = required_motor_torque(downstroke_torque, geom, motor, strike);
    FeasibilityReport {
        required_torque: required,
        torque_ok: motor.nominal_torque >= required,
        fits_envelope: motor.diameter <= envelope.max_diameter
            && motor.depth <= envelope.max_depth,
    }
}
