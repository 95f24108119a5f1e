//! MIDI/UDP ingress, pitch routing, and the linear-axis simulation.
//!
//! Two wire shapes arrive on the same socket: our framed note datagrams
//! (magic "RBMP") and raw MIDI channel messages. Both reduce to NoteEvents.
//! The key map translates pitch to an axis position and a striker index;
//! the axis itself is a trapezoidal point-to-point move.

use std::collections::BTreeMap;

use serde::Deserialize;

/// One scheduled strike. Velocity 0 never appears here; zero-velocity
/// note-ons are note-offs and a marimba strike is one-shot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoteEvent {
    pub pitch: u8,
    pub velocity: u8,
    pub tick: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NoteError {
    #[error("pitch {0} outside 0..=127")]
    Pitch(u8),
    #[error("velocity {0} outside 1..=127")]
    Velocity(u8),
}

impl NoteEvent {
    pub fn new(pitch: u8, velocity: u8, tick: u64) -> Result<NoteEvent, NoteError> {
        if pitch > 127 {
            return Err(NoteError::Pitch(pitch));
        }
        if velocity == 0 || velocity > 127 {
            return Err(NoteError::Velocity(velocity));
        }
        Ok(NoteEvent { pitch, velocity, tick })
    }
}

// ---------------------------------------------------------------------------
// MIDI parsing

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MidiError {
    /// Data byte where a status byte was expected (running status is
    /// unsupported by contract).
    #[error("expected a status byte at offset {offset}, found {byte:#04x} (running status unsupported)")]
    ExpectedStatus { offset: usize, byte: u8 },
    #[error("expected a data byte at offset {offset}, found status {byte:#04x}")]
    ExpectedData { offset: usize, byte: u8 },
    #[error("message truncated at offset {offset}")]
    Truncated { offset: usize },
    #[error("sysex starting at offset {offset} has no terminator")]
    UnterminatedSysex { offset: usize },
}

/// Parses complete MIDI messages into (pitch, velocity) strikes.
///
/// Note-on with velocity >= 1 yields a strike; note-on velocity 0 and
/// note-off are ignored; every other well-formed message is skipped.
pub fn parse_midi(bytes: &[u8]) -> Result<Vec<(u8, u8)>, MidiError> {
    let mut notes = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let status = bytes[i];
        if status < 0x80 {
            return Err(MidiError::ExpectedStatus { offset: i, byte: status });
        }
        if status >= 0xF8 {
            // Realtime byte between messages.
            i += 1;
            continue;
        }
        if status == 0xF0 {
            let end = bytes[i + 1..]
                .iter()
                .position(|&b| b == 0xF7)
                .ok_or(MidiError::UnterminatedSysex { offset: i })?;
            i += end + 2;
            continue;
        }
        let data_len = match status & 0xF0 {
            0xC0 | 0xD0 => 1,
            0x80 | 0x90 | 0xA0 | 0xB0 | 0xE0 => 2,
            _ => match status {
                // System common.
                0xF1 | 0xF3 => 1,
                0xF2 => 2,
                _ => 0,
            },
        };
        let mut data = [0u8; 2];
        for d in 0..data_len {
            let off = i + 1 + d;
            let byte = *bytes.get(off).ok_or(MidiError::Truncated { offset: off })?;
            if byte >= 0x80 {
                return Err(MidiError::ExpectedData { offset: off, byte });
            }
            data[d] = byte;
        }
        if status & 0xF0 == 0x90 && data[1] >= 1 {
            notes.push((data[0], data[1]));
        }
        i += 1 + data_len;
    }
    Ok(notes)
}

// ---------------------------------------------------------------------------
// Framed datagrams

pub const WIRE_MAGIC: &[u8; 4] = b"RBMP";
pub const WIRE_VERSION: u8 = 1;
/// Magic + version + count + 255 four-byte records.
pub const WIRE_MAX_LEN: usize = 6 + 255 * 4;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WireError {
    #[error("datagram lacks the RBMP magic")]
    BadMagic,
    #[error("unsupported wire version {0}")]
    BadVersion(u8),
    #[error("datagram of {got} bytes, {expected} required")]
    Truncated { expected: usize, got: usize },
    #[error("datagram of {0} bytes exceeds the {WIRE_MAX_LEN} byte bound")]
    Oversize(usize),
    #[error("{got} bytes of trailing garbage after {count} records")]
    TrailingBytes { count: u8, got: usize },
    #[error("record {index}: {field} = {value} out of range")]
    BadRecord { index: usize, field: &'static str, value: u8 },
    #[error("raw MIDI payload: {0}")]
    Midi(#[from] MidiError),
}

/// Parses a framed datagram. Records carry a tick offset relative to
/// `base_tick` (the next tick boundary at receipt). Any invalid record
/// rejects the whole datagram; velocity-0 records are note-offs and are
/// skipped.
pub fn parse_datagram(payload: &[u8], base_tick: u64) -> Result<Vec<NoteEvent>, WireError> {
    if payload.len() > WIRE_MAX_LEN {
        return Err(WireError::Oversize(payload.len()));
    }
    if payload.len() < 4 || &payload[..4] != WIRE_MAGIC {
        return Err(WireError::BadMagic);
    }
    if payload.len() < 6 {
        return Err(WireError::Truncated { expected: 6, got: payload.len() });
    }
    if payload[4] != WIRE_VERSION {
        return Err(WireError::BadVersion(payload[4]));
    }
    let count = payload[5];
    let expected = 6 + usize::from(count) * 4;
    if payload.len() < expected {
        return Err(WireError::Truncated { expected, got: payload.len() });
    }
    if payload.len() > expected {
        return Err(WireError::TrailingBytes { count, got: payload.len() - expected });
    }
    let mut events = Vec::with_capacity(usize::from(count));
    for index in 0..usize::from(count) {
        let rec = &payload[6 + index * 4..6 + index * 4 + 4];
        let (pitch, velocity) = (rec[0], rec[1]);
        if pitch > 127 {
            return Err(WireError::BadRecord { index, field: "pitch", value: pitch });
        }
        if velocity > 127 {
            return Err(WireError::BadRecord { index, field: "velocity", value: velocity });
        }
        if velocity == 0 {
            continue;
        }
        let offset = u16::from_be_bytes([rec[2], rec[3]]);
        events.push(NoteEvent {
            pitch,
            velocity,
            tick: base_tick + u64::from(offset),
        });
    }
    Ok(events)
}

/// Accepts either wire shape: framed datagrams by magic, anything else as
/// raw MIDI scheduled at `base_tick`.
pub fn parse_packet(payload: &[u8], base_tick: u64) -> Result<Vec<NoteEvent>, WireError> {
    if payload.len() >= 4 && &payload[..4] == WIRE_MAGIC {
        return parse_datagram(payload, base_tick);
    }
    let notes = parse_midi(payload)?;
    Ok(notes
        .into_iter()
        .map(|(pitch, velocity)| NoteEvent { pitch, velocity, tick: base_tick })
        .collect())
}

// ---------------------------------------------------------------------------
// Note-list files

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NoteFileError {
    #[error("line {line}: expected `tick pitch velocity`, got {got} fields")]
    FieldCount { line: usize, got: usize },
    #[error("line {line}: bad {field}: {text}")]
    BadField { line: usize, field: &'static str, text: String },
    #[error("line {1}: {0}")]
    Note(NoteError, usize),
}

/// Offline playback format: one `tick pitch velocity` triple per line,
/// `#` starts a comment.
pub fn parse_note_file(text: &str) -> Result<Vec<NoteEvent>, NoteFileError> {
    let mut events = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(NoteFileError::FieldCount { line, got: fields.len() });
        }
        let parse = |field: &'static str, text: &str| -> Result<u64, NoteFileError> {
            text.parse::<u64>().map_err(|_| NoteFileError::BadField {
                line,
                field,
                text: text.to_string(),
            })
        };
        let tick = parse("tick", fields[0])?;
        let pitch = parse("pitch", fields[1])?;
        let velocity = parse("velocity", fields[2])?;
        if pitch > 127 {
            return Err(NoteFileError::BadField { line, field: "pitch", text: fields[1].into() });
        }
        if velocity > 127 {
            return Err(NoteFileError::BadField { line, field: "velocity", text: fields[2].into() });
        }
        let note = NoteEvent::new(pitch as u8, velocity as u8, tick)
            .map_err(|e| NoteFileError::Note(e, line))?;
        events.push(note);
    }
    Ok(events)
}

// ---------------------------------------------------------------------------
// Key map

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyColor {
    White,
    Black,
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct KeyEntry {
    /// Arm position along the rail for this key (m).
    pub axis_position: f64,
    /// Striker 0..7; lower strikers (0..3) play white keys, upper (4..7)
    /// black keys.
    pub striker: usize,
    pub color: KeyColor,
}

pub const STRIKERS: usize = 8;
pub const AXES: usize = 4;

/// Arm carrying a striker: lower and upper striker of arm `i` share axis `i`.
pub fn axis_for_striker(striker: usize) -> usize {
    striker % AXES
}

#[derive(Debug, Clone, Default)]
pub struct KeyMap {
    entries: BTreeMap<u8, KeyEntry>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum KeyMapError {
    #[error("pitch {0} outside 0..=127")]
    Pitch(u8),
    #[error("pitch {pitch}: striker {striker} outside 0..{STRIKERS}")]
    Striker { pitch: u8, striker: usize },
    #[error("pitch {pitch}: {color:?} key on striker {striker} (white keys go to 0..4, black to 4..8)")]
    ColorBand { pitch: u8, striker: usize, color: KeyColor },
    #[error("pitch {pitch}: position {position} outside axis travel 0..={travel}")]
    Travel { pitch: u8, position: f64, travel: f64 },
}

impl KeyMap {
    pub fn from_entries(
        entries: impl IntoIterator<Item = (u8, KeyEntry)>,
        travel: f64,
    ) -> Result<KeyMap, KeyMapError> {
        let mut map = BTreeMap::new();
        for (pitch, entry) in entries {
            if pitch > 127 {
                return Err(KeyMapError::Pitch(pitch));
            }
            if entry.striker >= STRIKERS {
                return Err(KeyMapError::Striker { pitch, striker: entry.striker });
            }
            let lower = entry.striker < STRIKERS / 2;
            if lower != (entry.color == KeyColor::White) {
                return Err(KeyMapError::ColorBand {
                    pitch,
                    striker: entry.striker,
                    color: entry.color,
                });
            }
            if !(0.0..=travel).contains(&entry.axis_position) {
                return Err(KeyMapError::Travel {
                    pitch,
                    position: entry.axis_position,
                    travel,
                });
            }
            map.insert(pitch, entry);
        }
        Ok(KeyMap { entries: map })
    }

    /// Routing lookup; `None` means the pitch is not on this instrument.
    pub fn lookup(&self, pitch: u8) -> Option<&KeyEntry> {
        self.entries.get(&pitch)
    }

    pub fn pitches(&self) -> impl Iterator<Item = u8> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Linear axis

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisLimits {
    pub v_max: f64,
    pub a_max: f64,
    /// Rail length; positions live in 0..=travel (m).
    pub travel: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearAxisState {
    pub position: f64,
    pub velocity: f64,
    pub limits: AxisLimits,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AxisError {
    #[error("target {target} outside travel 0..={travel}")]
    OutsideTravel { target: f64, travel: f64 },
}

impl LinearAxisState {
    pub fn parked_at(position: f64, limits: AxisLimits) -> LinearAxisState {
        LinearAxisState { position, velocity: 0.0, limits }
    }

    /// True once the axis sits at `target` closely enough to strike.
    pub fn arrived(&self, target: f64) -> bool {
        (self.position - target).abs() <= ARRIVE_POS_TOL && self.velocity == 0.0
    }
}

/// Position agreement treated as "at the key"; well under half a key width.
pub const ARRIVE_POS_TOL: f64 = 2e-4;

/// One trapezoidal control step toward `target`: accelerate until the
/// braking distance for the current speed meets the remaining distance,
/// then decelerate; speed capped at v_max.
pub fn axis_step(
    state: &LinearAxisState,
    target: f64,
    dt: f64,
) -> Result<LinearAxisState, AxisError> {
    let lim = state.limits;
    if !(0.0..=lim.travel).contains(&target) {
        return Err(AxisError::OutsideTravel { target, travel: lim.travel });
    }
    let mut s = *state;
    let d = target - s.position;
    // Snap when one more decel step covers what is left.
    if d.abs() <= ARRIVE_POS_TOL && s.velocity.abs() <= lim.a_max * dt {
        s.position = target;
        s.velocity = 0.0;
        return Ok(s);
    }
    let dir = if d >= 0.0 { 1.0 } else { -1.0 };
    let toward = s.velocity * dir; // signed speed along the approach
    let braking = s.velocity * s.velocity / (2.0 * lim.a_max);
    let accel = if toward > 0.0 && braking >= d.abs() {
        // Close in; shed speed.
        -dir * lim.a_max
    } else {
        dir * lim.a_max
    };
    let mut v = s.velocity + accel * dt;
    v = v.clamp(-lim.v_max, lim.v_max);
    // Do not brake through zero into reverse.
    if accel * dir < 0.0 && v * dir < 0.0 {
        v = 0.0;
    }
    s.position += v * dt;
    s.velocity = v;
    Ok(s)
}

/// Closed-form arrival time of the trapezoid from rest over `distance`.
pub fn axis_arrival_time(distance: f64, limits: &AxisLimits) -> f64 {
    let d = distance.abs();
    if d == 0.0 {
        return 0.0;
    }
    let cruise_d = limits.v_max * limits.v_max / limits.a_max;
    if d <= cruise_d {
        2.0 * (d / limits.a_max).sqrt()
    } else {
        d / limits.v_max + limits.v_max / limits.a_max
    }
}
