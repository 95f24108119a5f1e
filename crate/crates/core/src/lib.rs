//! Simulation stack for a BLDC-driven robotic marimba striker.
//!
//! The crate models the full path from a MIDI note to a sound-level reading:
//! mallet torque sizing, constant-travel-time motion profiles, a servo loop
//! on a rigid-plant simulation with overcurrent protection, an eight-striker
//! rig on a deterministic tick scheduler, and an intensity-based acoustic
//! meter. An open-loop solenoid actuator rides along as the contrast
//! baseline for the bench experiments.

pub mod acoustics;
pub mod config;
pub mod experiment;
pub mod gateway;
pub mod mallet;
pub mod profile;
pub mod servo;
pub mod striker;
