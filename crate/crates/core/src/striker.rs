//! Striker activation state machine, tick scheduler, and the eight-striker rig.
//!
//! Each striker owns one mallet plant and drives it with a per-tick servo
//! loop (internally oversampled): inverse-dynamics feedforward along the
//! active trajectory plus a PID correction. A strike is dispatched on a tick
//! boundary, reaches the key after the fixed travel time, lifts back, and
//! returns to Idle. Contact is sensed redundantly: the plant's hard stop,
//! an angle threshold at the key surface, and a velocity-drop detector armed
//! once the downswing is underway.
//!
//! The rig couples strikers to four linear axes (arm `i` carries lower
//! striker `i` for white keys and upper striker `i + 4` for black keys) and
//! owns the tick loop: dispatch due notes, advance axes, release strikes
//! waiting on arm arrival, then advance every servo. The tick loop is the
//! single owner of all striker state; producers only enqueue notes.

use std::collections::BTreeMap;
use std::fmt;

use crate::gateway::{
    axis_for_striker, AxisLimits, KeyMap, LinearAxisState, NoteEvent, AXES, STRIKERS,
};
use crate::profile::{impact_speed, make_strike_profile, MotionProfile, ProfilerConfig};
use crate::servo::{
    overcurrent_check, pid_step, tracking_feedforward, OvercurrentLimit, PidGains, PidState,
    Plant, PlantState, Setpoint, Trajectory, TripState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrikerStatus {
    Unhomed,
    Homing,
    Idle,
    Striking,
    Lifting,
    Faulted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultReason {
    /// Hard-stop search did not stall within the homing timeout.
    HomingTimeout,
    /// i2t protection latched.
    Overcurrent,
    /// No contact within the strike watchdog window (3 travel times).
    StrikeTimeout,
    /// Lift failed to settle at the rest angle.
    LiftStall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    StrikerBusy,
    StrikerUnhomed,
    StrikerFaulted,
    AxisBusy,
    UnmappedPitch,
}

/// One line of the structured event log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub tick: u64,
    /// `None` for events that never resolved to a striker (unmapped pitch).
    pub striker: Option<usize>,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    HomeDone,
    StrikeStarted { pitch: u8, velocity: u8 },
    StrikeContact { impact_speed: f64 },
    LiftDone,
    NoteDropped { pitch: u8, velocity: u8, reason: DropReason },
    LateArrival { ticks_late: u64 },
    MidStrokeCorrection { velocity_error: f64 },
    Faulted { reason: FaultReason },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tick={} striker=", self.tick)?;
        match self.striker {
            Some(s) => write!(f, "{s}")?,
            None => write!(f, "-")?,
        }
        match self.kind {
            EventKind::HomeDone => write!(f, " event=home_done"),
            EventKind::StrikeStarted { pitch, velocity } => {
                write!(f, " event=strike_started pitch={pitch} velocity={velocity}")
            }
            EventKind::StrikeContact { impact_speed } => {
                write!(f, " event=strike_contact impact_speed={impact_speed:.6}")
            }
            EventKind::LiftDone => write!(f, " event=lift_done"),
            EventKind::NoteDropped { pitch, velocity, reason } => write!(
                f,
                " event=note_dropped pitch={pitch} velocity={velocity} reason={}",
                match reason {
                    DropReason::StrikerBusy => "striker_busy",
                    DropReason::StrikerUnhomed => "striker_unhomed",
                    DropReason::StrikerFaulted => "striker_faulted",
                    DropReason::AxisBusy => "axis_busy",
                    DropReason::UnmappedPitch => "unmapped_pitch",
                }
            ),
            EventKind::LateArrival { ticks_late } => {
                write!(f, " event=late_arrival ticks_late={ticks_late}")
            }
            EventKind::MidStrokeCorrection { velocity_error } => {
                write!(f, " event=mid_stroke_correction velocity_error={velocity_error:.6}")
            }
            EventKind::Faulted { reason } => write!(
                f,
                " event=faulted reason={}",
                match reason {
                    FaultReason::HomingTimeout => "homing_timeout",
                    FaultReason::Overcurrent => "overcurrent",
                    FaultReason::StrikeTimeout => "strike_timeout",
                    FaultReason::LiftStall => "lift_stall",
                }
            ),
        }
    }
}

/// Per-striker servo loop parameters.
#[derive(Debug, Clone, Copy, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoConfig {
    /// Plant integration substeps per control tick.
    pub substeps: u32,
    /// Angle agreement with the key surface treated as contact (rad). Keep
    /// well below one substep of approach motion at the softest stroke so
    /// the detector cannot fire a substep early.
    pub contact_tolerance: f64,
    /// Velocity detector arms once |velocity| toward the key exceeds this
    /// fraction of the nominal impact speed.
    pub arm_fraction: f64,
    /// Armed detector fires when |velocity| falls below this fraction.
    pub stall_fraction: f64,
    /// Mid-stroke checkpoint time as a fraction of the travel time.
    pub checkpoint_fraction: f64,
    /// Checkpoint replan threshold as a fraction of the nominal impact
    /// speed.
    pub checkpoint_tolerance: f64,
    /// Rest-angle agreement that completes a lift (rad).
    pub settle_tolerance: f64,
    /// Speed below which a finished lift counts as settled (rad/s). Must
    /// sit above the discrete friction chatter quantum `M_f dt / J`, the
    /// velocity ripple of a servo holding position against kinetic
    /// friction at a finite step size.
    pub settle_speed_eps: f64,
    /// Open-loop torque driving the hard-stop search (Nm).
    pub homing_torque: f64,
    /// Speed below which the homing search counts as stalled (rad/s).
    pub homing_speed_eps: f64,
    /// Continuous stall time that ends the search (s).
    pub homing_settle_time: f64,
    /// Hard-stop search time budget (s).
    pub homing_timeout: f64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("striker {index} cannot strike while {status:?}")]
pub struct StrikeRejected {
    pub index: usize,
    pub status: StrikerStatus,
}

struct ActiveStroke {
    trajectory: Trajectory,
    /// Local time of the current trajectory segment's origin; a checkpoint
    /// replan starts a fresh segment.
    segment_start: f64,
    /// Time since dispatch (s).
    t: f64,
    nominal_impact: f64,
    checkpoint_done: bool,
    armed: bool,
}

struct ActiveLift {
    trajectory: Trajectory,
    t: f64,
    duration: f64,
}

enum Motion {
    /// No drive at all (Unhomed, Faulted).
    Unpowered,
    Hold(Trajectory),
    Strike(ActiveStroke),
    Lift(ActiveLift),
}

/// One mallet servo. The `model` plant feeds the feedforward path; the
/// `plant` is the integrated truth. They coincide unless a robustness study
/// injects a mismatch.
pub struct Striker {
    pub index: usize,
    status: StrikerStatus,
    plant: Plant,
    model: Plant,
    profiler: ProfilerConfig,
    servo: ServoConfig,
    gains: PidGains,
    limit: OvercurrentLimit,
    state: PlantState,
    pid: PidState,
    trip: TripState,
    motion: Motion,
}

impl Striker {
    /// A powered-down striker: the mallet rests on the key surface until
    /// homing lifts it.
    pub fn new(
        index: usize,
        plant: Plant,
        profiler: ProfilerConfig,
        servo: ServoConfig,
        gains: PidGains,
        limit: OvercurrentLimit,
    ) -> Striker {
        Striker {
            index,
            status: StrikerStatus::Unhomed,
            plant,
            model: plant,
            profiler,
            servo,
            gains,
            limit,
            state: PlantState::at_rest(plant.strike.contact_angle),
            pid: PidState::default(),
            trip: TripState::default(),
            motion: Motion::Unpowered,
        }
    }

    /// Replaces the integrated plant while the controller keeps its nominal
    /// model. Perturbation studies dial inertia or friction here.
    pub fn set_true_plant(&mut self, plant: Plant) {
        self.plant = plant;
        self.state.angle = self
            .state
            .angle
            .max(plant.strike.contact_angle);
    }

    pub fn status(&self) -> StrikerStatus {
        self.status
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn is_tripped(&self) -> bool {
        self.trip.tripped
    }

    /// Current i2t accumulator value (A^2 s); thermal-load diagnostic.
    pub fn trip_load(&self) -> f64 {
        self.trip.accumulator
    }

    fn default_position(&self) -> f64 {
        self.profiler.default_position
    }

    fn contact_position(&self) -> f64 {
        self.profiler.contact_position
    }

    /// Clears a fault. The striker must re-home before striking again.
    pub fn reset(&mut self) {
        self.trip.reset();
        self.pid.reset();
        self.status = StrikerStatus::Unhomed;
        self.motion = Motion::Unpowered;
    }

    /// Blocking hard-stop homing: drive slowly onto the key surface until
    /// the motion stalls, take that angle as the encoder reference, then
    /// lift to the rest angle under servo control. Runs outside the tick
    /// loop (initialization time).
    pub fn home(&mut self, tick_period: f64) -> StrikerStatus {
        match self.status {
            StrikerStatus::Unhomed | StrikerStatus::Idle => {}
            other => return other,
        }
        self.status = StrikerStatus::Homing;
        self.motion = Motion::Unpowered;
        self.pid.reset();
        let dt = tick_period / f64::from(self.servo.substeps);

        // Stop search: constant small torque toward the key. The velocity
        // must stay under eps for a full settle window; the hard stop holds
        // it there once the surface is reached.
        let mut stalled = 0.0;
        let mut elapsed = 0.0;
        loop {
            if elapsed >= self.servo.homing_timeout {
                self.status = StrikerStatus::Faulted;
                return self.status;
            }
            let res = self.plant.step(&self.state, -self.servo.homing_torque, dt);
            self.state = res.state;
            elapsed += dt;
            if self.state.angular_velocity.abs() < self.servo.homing_speed_eps {
                stalled += dt;
            } else {
                stalled = 0.0;
            }
            if stalled >= self.servo.homing_settle_time {
                break;
            }
        }

        // The stall angle is the reference: the encoder reads the contact
        // angle exactly from here on.
        self.state.angle = self.contact_position();
        self.state.angular_velocity = 0.0;

        // Lift to rest under the normal servo.
        let lift = Trajectory::lift(
            self.contact_position(),
            self.default_position(),
            self.profiler.lift_time,
        );
        self.pid.reset();
        let mut t = 0.0;
        loop {
            if t >= 4.0 * self.profiler.lift_time {
                self.status = StrikerStatus::Faulted;
                return self.status;
            }
            t += dt;
            let sp = lift.sample(t);
            let res = self.servo_substep(sp, dt);
            if overcurrent_check(
                &mut self.trip,
                self.state.motor_current.abs(),
                &self.model.motor,
                dt,
                &self.limit,
            ) {
                self.status = StrikerStatus::Faulted;
                return self.status;
            }
            let _ = res;
            if t >= self.profiler.lift_time
                && (self.state.angle - self.default_position()).abs()
                    <= self.servo.settle_tolerance
                && self.state.angular_velocity.abs() < self.servo.settle_speed_eps
            {
                break;
            }
        }
        self.motion = Motion::Hold(Trajectory::hold(self.default_position()));
        self.status = StrikerStatus::Idle;
        self.status
    }

    /// Accepts a strike command. Only Idle strikers strike.
    /// Starts a stroke. Accepted while `Idle` and also while `Lifting`: a
    /// dispatch that lands inside the previous stroke's return preempts the
    /// lift and replans from the measured state, which is how the rig runs
    /// at repetition rates beyond one full strike-plus-lift cycle. A striker
    /// that is mid-downstroke is committed and rejects.
    pub fn begin_strike(&mut self, profile: &MotionProfile) -> Result<(), StrikeRejected> {
        if !matches!(self.status, StrikerStatus::Idle | StrikerStatus::Lifting) {
            return Err(StrikeRejected { index: self.index, status: self.status });
        }
        let trajectory = Trajectory::strike_from(
            self.state.angle,
            self.state.angular_velocity,
            self.contact_position(),
            impact_speed(profile),
            profile.travel_time,
        );
        self.pid.reset();
        self.motion = Motion::Strike(ActiveStroke {
            trajectory,
            segment_start: 0.0,
            t: 0.0,
            nominal_impact: impact_speed(profile),
            checkpoint_done: false,
            armed: false,
        });
        self.status = StrikerStatus::Striking;
        Ok(())
    }

    /// Advances one control tick. Physics events land on `stamp` (the tick
    /// boundary this advance ends on).
    pub fn advance_tick(&mut self, tick_period: f64, stamp: u64, events: &mut Vec<Event>) {
        // An unpowered mallet resting on the key is a fixed point: gravity
        // holds it against the stop and the stop zeroes the velocity. Skip
        // the substeps so idle strikers cost nothing in long runs.
        if matches!(self.motion, Motion::Unpowered)
            && self.state.angle <= self.contact_position()
            && self.state.angular_velocity == 0.0
        {
            self.state.sim_time += tick_period;
            return;
        }
        let dt = tick_period / f64::from(self.servo.substeps);
        for _ in 0..self.servo.substeps {
            self.substep(dt, stamp, events);
        }
    }

    fn servo_substep(&mut self, sp: Setpoint, dt: f64) -> Option<f64> {
        let ff = tracking_feedforward(&self.model, sp.position, sp.velocity, sp.acceleration);
        let fb = pid_step(&self.gains, sp.position, self.state.angle, dt, &mut self.pid);
        let torque =
            (ff + fb).clamp(-self.gains.output_limit, self.gains.output_limit);
        let res = self.plant.step(&self.state, torque, dt);
        self.state = res.state;
        res.impact_speed
    }

    fn fault(&mut self, reason: FaultReason, stamp: u64, events: &mut Vec<Event>) {
        self.status = StrikerStatus::Faulted;
        self.motion = Motion::Unpowered;
        events.push(Event { tick: stamp, striker: Some(self.index), kind: EventKind::Faulted { reason } });
    }

    fn check_trip(&mut self, dt: f64) -> bool {
        overcurrent_check(
            &mut self.trip,
            self.state.motor_current.abs(),
            &self.model.motor,
            dt,
            &self.limit,
        )
    }

    fn substep(&mut self, dt: f64, stamp: u64, events: &mut Vec<Event>) {
        match &mut self.motion {
            Motion::Unpowered => {
                let res = self.plant.step(&self.state, 0.0, dt);
                self.state = res.state;
            }
            Motion::Hold(traj) => {
                let sp = traj.sample(0.0);
                self.servo_substep(sp, dt);
                if self.check_trip(dt) {
                    self.fault(FaultReason::Overcurrent, stamp, events);
                }
            }
            Motion::Strike(stroke) => {
                let t_next = stroke.t + dt;
                let sp = stroke.trajectory.sample(t_next - stroke.segment_start);
                let travel = self.profiler.travel_time;
                let contact = self.profiler.contact_position;
                let servo = self.servo;
                let nominal = stroke.nominal_impact;

                let ff = tracking_feedforward(&self.model, sp.position, sp.velocity, sp.acceleration);
                let fb = pid_step(&self.gains, sp.position, self.state.angle, dt, &mut self.pid);
                let torque = (ff + fb).clamp(-self.gains.output_limit, self.gains.output_limit);
                let res = self.plant.step(&self.state, torque, dt);
                self.state = res.state;
                let Motion::Strike(stroke) = &mut self.motion else { unreachable!() };
                stroke.t = t_next;

                if overcurrent_check(
                    &mut self.trip,
                    self.state.motor_current.abs(),
                    &self.model.motor,
                    dt,
                    &self.limit,
                ) {
                    self.fault(FaultReason::Overcurrent, stamp, events);
                    return;
                }

                // Mid-stroke checkpoint: measured velocity against the
                // trajectory's own expectation; a large deviation replans
                // the remainder so contact timing survives model error.
                if !stroke.checkpoint_done && t_next >= servo.checkpoint_fraction * travel {
                    stroke.checkpoint_done = true;
                    let expected = stroke
                        .trajectory
                        .sample(t_next - stroke.segment_start)
                        .velocity;
                    let deviation = (self.state.angular_velocity - expected).abs();
                    // The encoder cannot resolve deviations below the
                    // friction chatter quantum at this step size; soft
                    // strokes would replan on noise without the floor.
                    let quantum = self.model.friction() / self.model.inertia() * dt;
                    let threshold = (servo.checkpoint_tolerance * nominal).max(2.0 * quantum);
                    if deviation > threshold {
                        stroke.trajectory = Trajectory::strike_from(
                            self.state.angle,
                            self.state.angular_velocity,
                            contact,
                            nominal,
                            travel - t_next,
                        );
                        stroke.segment_start = t_next;
                        events.push(Event {
                            tick: stamp,
                            striker: Some(self.index),
                            kind: EventKind::MidStrokeCorrection { velocity_error: deviation },
                        });
                    }
                }

                // Contact detectors, in order of authority: the plant's hard
                // stop (exact pre-impact speed), the angle threshold, and
                // the armed velocity-drop detector.
                let speed = self.state.angular_velocity.abs();
                if !stroke.armed
                    && self.state.angular_velocity < 0.0
                    && speed >= servo.arm_fraction * nominal
                {
                    stroke.armed = true;
                }
                let impact = if let Some(v) = res.impact_speed {
                    Some(v)
                } else if self.state.angle <= contact + servo.contact_tolerance {
                    Some(speed)
                } else if stroke.armed && speed < servo.stall_fraction * nominal {
                    Some(speed)
                } else {
                    None
                };

                if let Some(impact_speed) = impact {
                    events.push(Event {
                        tick: stamp,
                        striker: Some(self.index),
                        kind: EventKind::StrikeContact { impact_speed },
                    });
                    let lift = Trajectory::lift(
                        self.state.angle,
                        self.profiler.default_position,
                        self.profiler.lift_time,
                    );
                    self.pid.reset();
                    self.motion = Motion::Lift(ActiveLift {
                        trajectory: lift,
                        t: 0.0,
                        duration: self.profiler.lift_time,
                    });
                    self.status = StrikerStatus::Lifting;
                } else if t_next >= 3.0 * travel {
                    self.fault(FaultReason::StrikeTimeout, stamp, events);
                }
            }
            Motion::Lift(lift) => {
                let t_next = lift.t + dt;
                let sp = lift.trajectory.sample(t_next);
                let duration = lift.duration;
                self.servo_substep(sp, dt);
                let Motion::Lift(lift) = &mut self.motion else { unreachable!() };
                lift.t = t_next;
                if self.check_trip(dt) {
                    self.fault(FaultReason::Overcurrent, stamp, events);
                    return;
                }
                let settled = t_next >= duration
                    && (self.state.angle - self.profiler.default_position).abs()
                        <= self.servo.settle_tolerance
                    && self.state.angular_velocity.abs() < self.servo.settle_speed_eps;
                if settled {
                    self.motion = Motion::Hold(Trajectory::hold(self.profiler.default_position));
                    self.status = StrikerStatus::Idle;
                    events.push(Event {
                        tick: stamp,
                        striker: Some(self.index),
                        kind: EventKind::LiftDone,
                    });
                } else if t_next >= 4.0 * duration {
                    self.fault(FaultReason::LiftStall, stamp, events);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Tick scheduler

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("note for tick {tick} is in the past (current tick {current})")]
    PastTick { tick: u64, current: u64 },
    #[error("scheduler queue full ({capacity} notes); backpressure")]
    QueueFull { capacity: usize },
}

/// Bounded, tick-keyed note queue. Notes sharing a tick dispatch together,
/// in submission order.
#[derive(Debug, Default)]
pub struct TickScheduler {
    current: u64,
    queued: usize,
    capacity: usize,
    queue: BTreeMap<u64, Vec<NoteEvent>>,
}

impl TickScheduler {
    pub fn new(capacity: usize) -> TickScheduler {
        TickScheduler { current: 0, queued: 0, capacity, queue: BTreeMap::new() }
    }

    pub fn current_tick(&self) -> u64 {
        self.current
    }

    pub fn queued(&self) -> usize {
        self.queued
    }

    pub fn is_empty(&self) -> bool {
        self.queued == 0
    }

    pub fn next_scheduled(&self) -> Option<u64> {
        self.queue.keys().next().copied()
    }

    pub fn schedule(&mut self, note: NoteEvent) -> Result<(), ScheduleError> {
        if note.tick < self.current {
            return Err(ScheduleError::PastTick { tick: note.tick, current: self.current });
        }
        if self.queued >= self.capacity {
            return Err(ScheduleError::QueueFull { capacity: self.capacity });
        }
        self.queue.entry(note.tick).or_default().push(note);
        self.queued += 1;
        Ok(())
    }

    /// Removes and returns every note due at the current tick.
    pub fn take_due(&mut self) -> Vec<NoteEvent> {
        let mut due = Vec::new();
        let past: Vec<u64> =
            self.queue.range(..=self.current).map(|(k, _)| *k).collect();
        for key in past {
            if let Some(mut notes) = self.queue.remove(&key) {
                self.queued -= notes.len();
                due.append(&mut notes);
            }
        }
        due
    }

    pub fn advance(&mut self) {
        self.current += 1;
    }
}

// ---------------------------------------------------------------------------
// Rig

/// Everything needed to assemble a rig.
#[derive(Debug, Clone)]
pub struct RigConfig {
    pub plant: Plant,
    pub profiler: ProfilerConfig,
    pub servo: ServoConfig,
    pub gains: PidGains,
    pub overcurrent: OvercurrentLimit,
    pub axis_limits: AxisLimits,
    pub keymap: KeyMap,
    pub tick_period: f64,
    pub queue_capacity: usize,
}

struct Axis {
    state: LinearAxisState,
    target: Option<f64>,
}

struct PendingStrike {
    note: NoteEvent,
    striker: usize,
    target: f64,
}

/// Eight strikers on four arms plus the tick loop that owns them.
pub struct Rig {
    scheduler: TickScheduler,
    strikers: Vec<Striker>,
    axes: Vec<Axis>,
    keymap: KeyMap,
    profiler: ProfilerConfig,
    tick_period: f64,
    pending: Vec<PendingStrike>,
    dropped: u64,
}

impl Rig {
    pub fn new(cfg: RigConfig) -> Rig {
        let strikers = (0..STRIKERS)
            .map(|i| {
                Striker::new(i, cfg.plant, cfg.profiler, cfg.servo, cfg.gains, cfg.overcurrent)
            })
            .collect();
        let axes = (0..AXES)
            .map(|_| Axis { state: LinearAxisState::parked_at(0.0, cfg.axis_limits), target: None })
            .collect();
        Rig {
            scheduler: TickScheduler::new(cfg.queue_capacity),
            strikers,
            axes,
            keymap: cfg.keymap,
            profiler: cfg.profiler,
            tick_period: cfg.tick_period,
            pending: Vec::new(),
            dropped: 0,
        }
    }

    pub fn current_tick(&self) -> u64 {
        self.scheduler.current_tick()
    }

    pub fn tick_period(&self) -> f64 {
        self.tick_period
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn striker(&self, index: usize) -> &Striker {
        &self.strikers[index]
    }

    pub fn striker_mut(&mut self, index: usize) -> &mut Striker {
        &mut self.strikers[index]
    }

    pub fn axis_state(&self, index: usize) -> &LinearAxisState {
        &self.axes[index].state
    }

    pub fn keymap(&self) -> &KeyMap {
        &self.keymap
    }

    /// Teleports a parked axis (setup helper; arms start at the rail origin).
    pub fn park_axis(&mut self, index: usize, position: f64) {
        let axis = &mut self.axes[index];
        assert!(axis.target.is_none(), "axis {index} is moving");
        assert!(
            (0.0..=axis.state.limits.travel).contains(&position),
            "position {position} off the rail"
        );
        axis.state.position = position;
        axis.state.velocity = 0.0;
    }

    /// Homes every striker (blocking; runs before the tick timeline).
    pub fn home_all(&mut self) -> Vec<Event> {
        (0..self.strikers.len())
            .flat_map(|i| self.home_striker(i))
            .collect()
    }

    /// Homes one striker; the others keep their state. Single-key benches
    /// home only the striker they exercise, leaving the rest parked on the
    /// stop where they cost nothing to advance.
    pub fn home_striker(&mut self, index: usize) -> Vec<Event> {
        let now = self.scheduler.current_tick();
        let status = self.strikers[index].home(self.tick_period);
        let kind = match status {
            StrikerStatus::Idle => EventKind::HomeDone,
            _ => EventKind::Faulted { reason: FaultReason::HomingTimeout },
        };
        vec![Event { tick: now, striker: Some(index), kind }]
    }

    pub fn schedule(&mut self, note: NoteEvent) -> Result<(), ScheduleError> {
        self.scheduler.schedule(note)
    }

    /// True once nothing remains in flight: no queued notes, no pending
    /// strikes, and every striker parked in a terminal status.
    pub fn quiescent(&self) -> bool {
        self.scheduler.is_empty()
            && self.pending.is_empty()
            && self.strikers.iter().all(|s| {
                matches!(
                    s.status(),
                    StrikerStatus::Idle | StrikerStatus::Unhomed | StrikerStatus::Faulted
                )
            })
    }

    fn drop_note(
        &mut self,
        note: NoteEvent,
        striker: Option<usize>,
        reason: DropReason,
        now: u64,
        events: &mut Vec<Event>,
    ) {
        self.dropped += 1;
        events.push(Event {
            tick: now,
            striker,
            kind: EventKind::NoteDropped { pitch: note.pitch, velocity: note.velocity, reason },
        });
    }

    fn start_strike(&mut self, note: NoteEvent, now: u64, events: &mut Vec<Event>) {
        let striker = self.keymap.lookup(note.pitch).expect("routed pitch").striker;
        let profile =
            make_strike_profile(note.velocity, &self.profiler).expect("validated velocity");
        match self.strikers[striker].begin_strike(&profile) {
            Ok(()) => events.push(Event {
                tick: now,
                striker: Some(striker),
                kind: EventKind::StrikeStarted { pitch: note.pitch, velocity: note.velocity },
            }),
            Err(_) => self.drop_note(note, Some(striker), DropReason::StrikerBusy, now, events),
        }
    }

    fn route(&mut self, note: NoteEvent, now: u64, events: &mut Vec<Event>) {
        let Some(entry) = self.keymap.lookup(note.pitch).copied() else {
            self.drop_note(note, None, DropReason::UnmappedPitch, now, events);
            return;
        };
        let striker = entry.striker;
        let axis = axis_for_striker(striker);
        let reason = match self.strikers[striker].status() {
            // Lifting accepts: the new stroke preempts the return leg.
            StrikerStatus::Idle | StrikerStatus::Lifting => None,
            StrikerStatus::Unhomed => Some(DropReason::StrikerUnhomed),
            StrikerStatus::Faulted => Some(DropReason::StrikerFaulted),
            _ => Some(DropReason::StrikerBusy),
        };
        if let Some(reason) = reason {
            self.drop_note(note, Some(striker), reason, now, events);
            return;
        }
        if self.pending.iter().any(|p| p.striker == striker) {
            self.drop_note(note, Some(striker), DropReason::StrikerBusy, now, events);
            return;
        }
        let at_key =
            self.axes[axis].target.is_none() && self.axes[axis].state.arrived(entry.axis_position);
        if at_key {
            self.start_strike(note, now, events);
            return;
        }
        // The arm must move: refuse a double-booked axis, and never drag an
        // arm whose other striker is mid-stroke.
        if self.pending.iter().any(|p| axis_for_striker(p.striker) == axis) {
            self.drop_note(note, Some(striker), DropReason::AxisBusy, now, events);
            return;
        }
        let partner = (striker + AXES) % STRIKERS;
        for s in [striker, partner] {
            if matches!(
                self.strikers[s].status(),
                StrikerStatus::Striking | StrikerStatus::Lifting | StrikerStatus::Homing
            ) {
                self.drop_note(note, Some(striker), DropReason::AxisBusy, now, events);
                return;
            }
        }
        self.axes[axis].target = Some(entry.axis_position);
        self.pending.push(PendingStrike { note, striker, target: entry.axis_position });
    }

    /// One control tick: dispatch due notes, advance arms, release strikes
    /// waiting on arrival, advance every striker, then advance the clock.
    /// Dispatch-side events are stamped with the current tick; physics
    /// events land on the boundary the advance ends on (current + 1).
    pub fn tick(&mut self) -> Vec<Event> {
        let now = self.scheduler.current_tick();
        let mut events = Vec::new();

        for note in self.scheduler.take_due() {
            self.route(note, now, &mut events);
        }

        for axis in &mut self.axes {
            if let Some(target) = axis.target {
                axis.state = crate::gateway::axis_step(&axis.state, target, self.tick_period)
                    .expect("targets validated against travel");
                if axis.state.arrived(target) {
                    axis.target = None;
                }
            }
        }

        let mut still_pending = Vec::new();
        for p in std::mem::take(&mut self.pending) {
            let axis = axis_for_striker(p.striker);
            if self.axes[axis].target.is_none() && self.axes[axis].state.arrived(p.target) {
                if self.strikers[p.striker].status() == StrikerStatus::Idle {
                    let late = now.saturating_sub(p.note.tick);
                    if late > 0 {
                        events.push(Event {
                            tick: now,
                            striker: Some(p.striker),
                            kind: EventKind::LateArrival { ticks_late: late },
                        });
                    }
                    self.start_strike(p.note, now, &mut events);
                } else {
                    self.drop_note(p.note, Some(p.striker), DropReason::StrikerFaulted, now, &mut events);
                }
            } else {
                still_pending.push(p);
            }
        }
        self.pending = still_pending;

        for striker in &mut self.strikers {
            striker.advance_tick(self.tick_period, now + 1, &mut events);
        }

        self.scheduler.advance();
        events
    }

    /// Runs `ticks` control ticks, concatenating the event log.
    pub fn run(&mut self, ticks: u64) -> Vec<Event> {
        let mut events = Vec::new();
        for _ in 0..ticks {
            events.append(&mut self.tick());
        }
        events
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{KeyColor, KeyEntry};
    use crate::mallet::{MalletGeometry, MotorSpec, StrikeConfig};

    const TICK: f64 = 1e-3;
    const CONTACT: f64 = std::f64::consts::FRAC_PI_2;
    const DEPTH: f64 = 2.5e-5;

    fn plant() -> Plant {
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
            strike: StrikeConfig { contact_angle: CONTACT, gravity: 9.81 },
        }
    }

    fn profiler() -> ProfilerConfig {
        ProfilerConfig {
            accel_min: 0.3835,
            accel_max: 350.0,
            travel_time: 0.015,
            lift_time: 0.0154,
            default_position: CONTACT + DEPTH,
            contact_position: CONTACT,
        }
    }

    fn servo() -> ServoConfig {
        ServoConfig {
            substeps: 64,
            contact_tolerance: 1e-9,
            arm_fraction: 0.3,
            stall_fraction: 0.05,
            checkpoint_fraction: 0.5,
            checkpoint_tolerance: 0.02,
            settle_tolerance: 1e-5,
            settle_speed_eps: 0.01,
            homing_torque: 0.02,
            homing_speed_eps: 1e-4,
            homing_settle_time: 0.010,
            homing_timeout: 2.0,
        }
    }

    fn gains() -> PidGains {
        PidGains {
            kp: 147.0,
            ki: 40000.0,
            kd: 0.43,
            integral_limit: 0.0515,
            output_limit: 0.6288,
        }
    }

    fn limit() -> OvercurrentLimit {
        OvercurrentLimit { i2t_limit: 100.0, cooldown_tau: 1.5 }
    }

    fn striker() -> Striker {
        Striker::new(0, plant(), profiler(), servo(), gains(), limit())
    }

    fn homed_striker() -> Striker {
        let mut s = striker();
        assert_eq!(s.home(TICK), StrikerStatus::Idle);
        s
    }

    /// Runs ticks until the striker leaves `Striking`/`Lifting`, returning
    /// (events, ticks elapsed).
    fn run_striker(s: &mut Striker, max_ticks: u64) -> Vec<Event> {
        let mut events = Vec::new();
        for k in 0..max_ticks {
            s.advance_tick(TICK, k + 1, &mut events);
        }
        events
    }

    fn contact_events(events: &[Event]) -> Vec<(u64, f64)> {
        events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::StrikeContact { impact_speed } => Some((e.tick, impact_speed)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn homing_reaches_default_and_is_idempotent() {
        let mut s = striker();
        assert_eq!(s.status(), StrikerStatus::Unhomed);
        assert_eq!(s.home(TICK), StrikerStatus::Idle);
        let rest = profiler().default_position;
        assert!((s.state().angle - rest).abs() < 2e-5, "angle {}", s.state().angle);
        assert_eq!(s.home(TICK), StrikerStatus::Idle);
        assert!((s.state().angle - rest).abs() < 2e-5);
    }

    #[test]
    fn strike_before_homing_is_rejected() {
        let mut s = striker();
        let profile = make_strike_profile(100, &profiler()).unwrap();
        let err = s.begin_strike(&profile).unwrap_err();
        assert_eq!(err, StrikeRejected { index: 0, status: StrikerStatus::Unhomed });
    }

    #[test]
    fn contact_lands_on_the_travel_time_boundary_for_every_velocity() {
        // Dispatch at tick 0; travel time is exactly 15 ticks; the contact
        // must land on that boundary for every MIDI velocity, with impact
        // speed tracking a*T closely.
        let cfg = profiler();
        let expected_tick = (cfg.travel_time / TICK).ceil() as u64;
        // Impact speed resolution floor: the friction chatter quantum.
        let p = plant();
        let quantum = p.friction() / p.inertia() * (TICK / 64.0);
        for vel in 1..=127u8 {
            let mut s = homed_striker();
            let profile = make_strike_profile(vel, &cfg).unwrap();
            s.begin_strike(&profile).unwrap();
            let events = run_striker(&mut s, 40);
            let contacts = contact_events(&events);
            assert_eq!(contacts.len(), 1, "vel {vel}: {events:?}");
            let (tick, impact) = contacts[0];
            assert_eq!(tick, expected_tick, "vel {vel}");
            let nominal = profile.acceleration * cfg.travel_time;
            let tol = (3e-3 * nominal).max(2.0 * quantum);
            assert!(
                (impact - nominal).abs() < tol,
                "vel {vel}: impact {impact} vs {nominal}"
            );
            assert!(
                !events.iter().any(|e| matches!(e.kind, EventKind::MidStrokeCorrection { .. })),
                "vel {vel}: spurious correction on the nominal plant"
            );
        }
    }

    #[test]
    fn lift_returns_to_idle_within_lift_time_ticks() {
        let cfg = profiler();
        let mut s = homed_striker();
        let profile = make_strike_profile(100, &cfg).unwrap();
        s.begin_strike(&profile).unwrap();
        let events = run_striker(&mut s, 60);
        let contact_tick = contact_events(&events)[0].0;
        let lift_done = events
            .iter()
            .find(|e| matches!(e.kind, EventKind::LiftDone))
            .expect("lift completes");
        let budget = (cfg.lift_time / TICK).ceil() as u64;
        assert!(
            lift_done.tick - contact_tick <= budget,
            "lift took {} ticks, budget {budget}",
            lift_done.tick - contact_tick
        );
        assert_eq!(s.status(), StrikerStatus::Idle);
        assert!((s.state().angle - cfg.default_position).abs() <= 1e-5);
    }

    #[test]
    fn overcurrent_trip_faults_and_reset_recovers() {
        let mut s = Striker::new(
            0,
            plant(),
            profiler(),
            servo(),
            gains(),
            OvercurrentLimit { i2t_limit: 1e-6, cooldown_tau: 1.5 },
        );
        assert_eq!(s.home(TICK), StrikerStatus::Idle);
        let profile = make_strike_profile(127, &profiler()).unwrap();
        s.begin_strike(&profile).unwrap();
        let events = run_striker(&mut s, 40);
        assert_eq!(s.status(), StrikerStatus::Faulted);
        assert!(s.is_tripped());
        assert!(events
            .iter()
            .any(|e| e.kind == EventKind::Faulted { reason: FaultReason::Overcurrent }));
        assert!(contact_events(&events).is_empty());
        // Faulted is terminal: no strike, no home.
        assert!(s.begin_strike(&profile).is_err());
        assert_eq!(s.home(TICK), StrikerStatus::Faulted);
        // Explicit reset clears the latch; homing restores service.
        s.reset();
        assert!(!s.is_tripped());
        assert_eq!(s.status(), StrikerStatus::Unhomed);
        assert_eq!(s.home(TICK), StrikerStatus::Idle);
    }

    #[test]
    fn inertia_mismatch_stays_within_one_tick_of_nominal() {
        // The perturbation study: true rotor inertia 5% high while the
        // model keeps nominal parameters.
        let mut perturbed = plant();
        perturbed.motor.rotor_inertia *= 1.05;
        let nominal_tick = {
            let mut s = homed_striker();
            s.begin_strike(&make_strike_profile(100, &profiler()).unwrap()).unwrap();
            contact_events(&run_striker(&mut s, 40))[0].0 as i64
        };
        let mut s = homed_striker();
        s.set_true_plant(perturbed);
        s.begin_strike(&make_strike_profile(100, &profiler()).unwrap()).unwrap();
        let events = run_striker(&mut s, 40);
        let contacts = contact_events(&events);
        assert_eq!(contacts.len(), 1);
        assert!(
            (contacts[0].0 as i64 - nominal_tick).abs() <= 1,
            "perturbed contact at {} vs nominal {nominal_tick}",
            contacts[0].0
        );
    }

    #[test]
    fn gross_inertia_error_triggers_checkpoint_correction() {
        let mut perturbed = plant();
        perturbed.motor.rotor_inertia += 2.0 * crate::mallet::mallet_inertia(&plant().geom);
        let mut s = homed_striker();
        s.set_true_plant(perturbed);
        s.begin_strike(&make_strike_profile(100, &profiler()).unwrap()).unwrap();
        let events = run_striker(&mut s, 60);
        let corrected = events
            .iter()
            .any(|e| matches!(e.kind, EventKind::MidStrokeCorrection { .. }));
        let contacts = contact_events(&events);
        let faulted = events
            .iter()
            .any(|e| matches!(e.kind, EventKind::Faulted { .. }));
        assert!(corrected, "tripled inertia should trip the checkpoint: {events:?}");
        assert!(
            !contacts.is_empty() || faulted,
            "liveness: contact or fault required"
        );
        if let Some(&(tick, _)) = contacts.first() {
            assert!(
                tick as i64 - 15 <= 45,
                "contact within the watchdog window, got {tick}"
            );
        }
    }

    #[test]
    fn scheduler_rejects_past_and_overflow() {
        let mut sched = TickScheduler::new(2);
        let note = |tick| NoteEvent { pitch: 60, velocity: 100, tick };
        sched.schedule(note(5)).unwrap();
        sched.schedule(note(5)).unwrap();
        assert_eq!(
            sched.schedule(note(6)).unwrap_err(),
            ScheduleError::QueueFull { capacity: 2 }
        );
        for _ in 0..6 {
            sched.advance();
        }
        assert_eq!(
            sched.schedule(note(3)).unwrap_err(),
            ScheduleError::PastTick { tick: 3, current: 6 }
        );
        // Both tick-5 notes come out together, once.
        let due = sched.take_due();
        assert_eq!(due.len(), 2);
        assert!(sched.is_empty());
        assert!(sched.take_due().is_empty());
    }

    // Rig fixtures: four keys, one per arm, plus a black key sharing arm 0.
    fn keymap() -> KeyMap {
        KeyMap::from_entries(
            [
                (60, KeyEntry { axis_position: 0.00, striker: 0, color: KeyColor::White }),
                (62, KeyEntry { axis_position: 0.04, striker: 1, color: KeyColor::White }),
                (64, KeyEntry { axis_position: 0.08, striker: 2, color: KeyColor::White }),
                (65, KeyEntry { axis_position: 0.12, striker: 3, color: KeyColor::White }),
                (61, KeyEntry { axis_position: 0.06, striker: 4, color: KeyColor::Black }),
            ],
            0.8,
        )
        .unwrap()
    }

    fn rig() -> Rig {
        let mut rig = Rig::new(RigConfig {
            plant: plant(),
            profiler: profiler(),
            servo: servo(),
            gains: gains(),
            overcurrent: limit(),
            axis_limits: AxisLimits { v_max: 1.2, a_max: 20.0, travel: 0.8 },
            keymap: keymap(),
            tick_period: TICK,
            queue_capacity: 256,
        });
        let events = rig.home_all();
        assert!(events.iter().all(|e| e.kind == EventKind::HomeDone));
        rig
    }

    fn note(pitch: u8, velocity: u8, tick: u64) -> NoteEvent {
        NoteEvent { pitch, velocity, tick }
    }

    #[test]
    fn same_striker_conflict_drops_the_later_note() {
        let mut rig = rig();
        // Axis 0 already parked at pitch 60's position (origin).
        rig.schedule(note(60, 100, 5)).unwrap();
        rig.schedule(note(60, 100, 6)).unwrap();
        let events = rig.run(60);
        let started: Vec<_> = events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::StrikeStarted { .. }))
            .collect();
        assert_eq!(started.len(), 1);
        assert_eq!(started[0].tick, 5);
        let dropped: Vec<_> = events
            .iter()
            .filter(|e| {
                matches!(
                    e.kind,
                    EventKind::NoteDropped { reason: DropReason::StrikerBusy, .. }
                )
            })
            .collect();
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].tick, 6);
        assert_eq!(rig.dropped(), 1);
        assert_eq!(contact_events(&events).len(), 1);
    }

    #[test]
    fn strike_during_lift_preempts_and_contacts_on_time() {
        let mut rig = rig();
        // First contact lands at tick 20; the second dispatch at tick 25
        // arrives mid-lift and must preempt the return leg, not drop.
        rig.schedule(note(60, 100, 5)).unwrap();
        rig.schedule(note(60, 100, 25)).unwrap();
        let events = rig.run(80);
        assert_eq!(rig.dropped(), 0);
        let contacts = contact_events(&events);
        assert_eq!(contacts.len(), 2);
        assert_eq!(contacts[0].0, 20);
        assert_eq!(contacts[1].0, 40);
        // The preempted lift never completes; only the second one does.
        let lifts: Vec<_> = events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::LiftDone))
            .collect();
        assert_eq!(lifts.len(), 1);
        assert!(rig.striker(0).status() == StrikerStatus::Idle);
    }

    #[test]
    fn chord_on_distinct_arms_contacts_within_one_tick() {
        let mut rig = rig();
        // Park every arm at its chord key first.
        rig.park_axis(1, 0.04);
        rig.park_axis(2, 0.08);
        rig.park_axis(3, 0.12);
        for pitch in [60, 62, 64, 65] {
            rig.schedule(note(pitch, 90, 10)).unwrap();
        }
        let events = rig.run(60);
        let contacts = contact_events(&events);
        assert_eq!(contacts.len(), 4);
        let ticks: Vec<u64> = contacts.iter().map(|c| c.0).collect();
        let spread = ticks.iter().max().unwrap() - ticks.iter().min().unwrap();
        assert!(spread <= 1, "chord spread {spread} ticks: {ticks:?}");
    }

    #[test]
    fn pending_strike_waits_for_the_arm_and_logs_lateness() {
        let mut rig = rig();
        // Pitch 62 sits at 0.04 m; arm 1 starts at the origin.
        rig.schedule(note(62, 100, 5)).unwrap();
        let events = rig.run(150);
        let started = events
            .iter()
            .find(|e| matches!(e.kind, EventKind::StrikeStarted { .. }))
            .expect("strike dispatched after arrival");
        assert!(started.tick > 5, "axis travel takes ticks");
        let late = events
            .iter()
            .find_map(|e| match e.kind {
                EventKind::LateArrival { ticks_late } => Some((e.tick, ticks_late)),
                _ => None,
            })
            .expect("lateness logged");
        assert_eq!(late.0, started.tick);
        assert_eq!(late.1, started.tick - 5);
        // Travel time still holds from the actual dispatch.
        let contact = contact_events(&events)[0];
        assert_eq!(contact.0, started.tick + 15);
        // The arm really is at the key.
        assert!((rig.axis_state(1).position - 0.04).abs() <= 2e-4);
    }

    #[test]
    fn axis_conflict_drops_the_cross_arm_note() {
        let mut rig = rig();
        // Strike pitch 60 (arm 0 parked at its key), then ask the black key
        // on the same arm to move mid-stroke.
        rig.schedule(note(60, 100, 5)).unwrap();
        rig.schedule(note(61, 100, 7)).unwrap();
        let events = rig.run(80);
        assert!(events.iter().any(|e| {
            e.tick == 7
                && matches!(
                    e.kind,
                    EventKind::NoteDropped { reason: DropReason::AxisBusy, pitch: 61, .. }
                )
        }));
        assert_eq!(contact_events(&events).len(), 1);
    }

    #[test]
    fn unhomed_rig_drops_with_unhomed_reason() {
        let mut rig = Rig::new(RigConfig {
            plant: plant(),
            profiler: profiler(),
            servo: servo(),
            gains: gains(),
            overcurrent: limit(),
            axis_limits: AxisLimits { v_max: 1.2, a_max: 20.0, travel: 0.8 },
            keymap: keymap(),
            tick_period: TICK,
            queue_capacity: 256,
        });
        rig.schedule(note(60, 100, 2)).unwrap();
        let events = rig.run(10);
        assert!(events.iter().any(|e| matches!(
            e.kind,
            EventKind::NoteDropped { reason: DropReason::StrikerUnhomed, .. }
        )));
    }

    #[test]
    fn unmapped_pitch_drops_without_a_striker() {
        let mut rig = rig();
        rig.schedule(note(99, 100, 2)).unwrap();
        let events = rig.run(5);
        let drop = events
            .iter()
            .find(|e| matches!(e.kind, EventKind::NoteDropped { .. }))
            .unwrap();
        assert_eq!(drop.striker, None);
        assert!(matches!(
            drop.kind,
            EventKind::NoteDropped { reason: DropReason::UnmappedPitch, .. }
        ));
    }

    #[test]
    fn identical_schedules_produce_identical_event_logs() {
        let run = || {
            let mut rig = rig();
            rig.park_axis(1, 0.04);
            for (i, pitch) in [60, 62, 60, 64].iter().enumerate() {
                rig.schedule(note(*pitch, 40 + 20 * i as u8, 5 + 40 * i as u64)).unwrap();
            }
            rig.run(250)
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn event_log_lines_are_stable() {
        let e = Event {
            tick: 120,
            striker: Some(3),
            kind: EventKind::StrikeContact { impact_speed: 5.25 },
        };
        assert_eq!(e.to_string(), "tick=120 striker=3 event=strike_contact impact_speed=5.250000");
        let d = Event {
            tick: 7,
            striker: None,
            kind: EventKind::NoteDropped { pitch: 99, velocity: 10, reason: DropReason::UnmappedPitch },
        };
        assert_eq!(
            d.to_string(),
            "tick=7 striker=- event=note_dropped pitch=99 velocity=10 reason=unmapped_pitch"
        );
    }
}
