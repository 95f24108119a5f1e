//! Constant-travel-time motion profiles.
//!
//! Every strike runs for the same travel time `T` regardless of loudness, so
//! note onset latency never depends on MIDI velocity. Velocity maps affinely
//! onto profile acceleration, and the commanded position scales with the
//! acceleration (`target = a T^2 / 2`), which is what keeps `T` constant:
//! louder strikes command positions past the key surface and meet it at
//! speed `a T`.

/// Whether a profile drives the mallet into the key or back to rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrokeDirection {
    Strike,
    Lift,
}

/// A single commanded stroke.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionProfile {
    /// Profile acceleration (rad/s^2, > 0). For lifts this is the peak
    /// acceleration of the rest-to-rest trajectory.
    pub acceleration: f64,
    /// Commanded displacement from the stroke start (rad, toward the key for
    /// strikes; equals `a T^2 / 2`, which may lie past the contact angle).
    pub target_position: f64,
    /// Time from command to completing the stroke (s).
    pub travel_time: f64,
    pub direction: StrokeDirection,
}

/// Strike profile generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
pub struct ProfilerConfig {
    /// Acceleration commanded at MIDI velocity 1 (rad/s^2).
    pub accel_min: f64,
    /// Acceleration commanded at MIDI velocity 127 (rad/s^2).
    pub accel_max: f64,
    /// Strike travel time T (s), identical for every velocity.
    pub travel_time: f64,
    /// Time to return from contact to the rest angle (s).
    pub lift_time: f64,
    /// Rest angle above the key (rad from downward vertical).
    pub default_position: f64,
    /// Key surface angle (rad from downward vertical).
    pub contact_position: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProfileError {
    #[error("MIDI velocity {0} outside 1..=127")]
    VelocityOutOfRange(u8),
    #[error("profiler config invalid: {0}")]
    BadConfig(String),
    #[error(
        "softest stroke covers {reach} rad in the travel time but the key sits {stroke} rad below rest"
    )]
    CannotReachContact { reach: f64, stroke: f64 },
}

impl ProfilerConfig {
    pub fn validate(&self) -> Result<(), ProfileError> {
        let bad = |msg: String| Err(ProfileError::BadConfig(msg));
        if !(self.accel_min.is_finite() && self.accel_min > 0.0) {
            return bad(format!("accel_min = {}", self.accel_min));
        }
        if !(self.accel_max.is_finite() && self.accel_max > self.accel_min) {
            return bad(format!(
                "accel_max = {} must exceed accel_min = {}",
                self.accel_max, self.accel_min
            ));
        }
        if !(self.travel_time.is_finite() && self.travel_time > 0.0) {
            return bad(format!("travel_time = {}", self.travel_time));
        }
        if !(self.lift_time.is_finite() && self.lift_time > 0.0) {
            return bad(format!("lift_time = {}", self.lift_time));
        }
        if !(self.default_position.is_finite()
            && self.contact_position.is_finite()
            && self.default_position > self.contact_position)
        {
            return bad(format!(
                "default_position = {} must sit above contact_position = {}",
                self.default_position, self.contact_position
            ));
        }
        Ok(())
    }

    /// Stroke depth from rest to the key surface (rad).
    pub fn stroke_depth(&self) -> f64 {
        self.default_position - self.contact_position
    }

    /// Strike plus lift duration (s); its inverse caps the repetition rate.
    pub fn cycle_time(&self) -> f64 {
        self.travel_time + self.lift_time
    }
}

/// Affine velocity-to-acceleration map:
/// `a = a_min + (vel - 1) / 126 * (a_max - a_min)`.
pub fn velocity_to_acceleration(vel: u8, cfg: &ProfilerConfig) -> Result<f64, ProfileError> {
    if vel == 0 || vel > 127 {
        return Err(ProfileError::VelocityOutOfRange(vel));
    }
    Ok(cfg.accel_min + f64::from(vel - 1) / 126.0 * (cfg.accel_max - cfg.accel_min))
}

/// Builds the strike profile for a MIDI velocity. The commanded target is
/// `a T^2 / 2`, so the softest stroke must still cover the stroke depth.
pub fn make_strike_profile(vel: u8, cfg: &ProfilerConfig) -> Result<MotionProfile, ProfileError> {
    cfg.validate()?;
    let reach = 0.5 * cfg.accel_min * cfg.travel_time * cfg.travel_time;
    if reach < cfg.stroke_depth() {
        return Err(ProfileError::CannotReachContact {
            reach,
            stroke: cfg.stroke_depth(),
        });
    }
    let acceleration = velocity_to_acceleration(vel, cfg)?;
    Ok(MotionProfile {
        acceleration,
        target_position: 0.5 * acceleration * cfg.travel_time * cfg.travel_time,
        travel_time: cfg.travel_time,
        direction: StrokeDirection::Strike,
    })
}

/// Builds the return stroke from contact back to the rest angle. Rest-to-rest
/// over `lift_time`; the stored acceleration is the trajectory peak
/// `6 d / t^2`.
pub fn make_lift_profile(cfg: &ProfilerConfig) -> Result<MotionProfile, ProfileError> {
    cfg.validate()?;
    let depth = cfg.stroke_depth();
    Ok(MotionProfile {
        acceleration: 6.0 * depth / (cfg.lift_time * cfg.lift_time),
        target_position: depth,
        travel_time: cfg.lift_time,
        direction: StrokeDirection::Lift,
    })
}

/// Speed at which a strike meets the key: `omega = a T` (constant-acceleration
/// kinematics to the contact point). Zero for lifts, which end at rest.
pub fn impact_speed(profile: &MotionProfile) -> f64 {
    match profile.direction {
        StrokeDirection::Strike => profile.acceleration * profile.travel_time,
        StrokeDirection::Lift => 0.0,
    }
}
