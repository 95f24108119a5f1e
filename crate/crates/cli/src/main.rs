//! Command-line bench for the striker rig: the offline experiment
//! reproductions plus the live UDP service.

use std::fs;
use std::io::{BufWriter, Write};
use std::net::UdpSocket;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use strikelab::acoustics::{impact_to_intensity, BarRing, IntensitySample, SplMeter, SplReading};
use strikelab::config::Config;
use strikelab::experiment::{
    fit_intensity_line, parse_sweep_csv, run_dynamic_sweep, run_speed_sweep, write_plot_data,
    write_sweep_csv, Actuator, SweepRecord,
};
use strikelab::gateway::{parse_note_file, parse_packet, NoteEvent};
use strikelab::striker::{Event, EventKind, Rig, StrikerStatus};

#[derive(Parser)]
#[command(name = "strikelab", version, about = "Bench for the robotic marimba striker rig")]
struct Cli {
    /// Configuration file; the embedded reference configuration when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActuatorArg {
    Bldc,
    Solenoid,
}

impl From<ActuatorArg> for Actuator {
    fn from(arg: ActuatorArg) -> Actuator {
        match arg {
            ActuatorArg::Bldc => Actuator::Bldc,
            ActuatorArg::Solenoid => Actuator::Solenoid,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Home every striker and print the event log.
    Home,
    /// Play one note through the rig and print the event log.
    Strike {
        #[arg(long)]
        pitch: u8,
        #[arg(long)]
        vel: u8,
    },
    /// Run the dynamics sweep and write its CSV.
    SweepDynamics {
        #[arg(long)]
        actuator: ActuatorArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Also write a two-column mean-intensity-per-velocity plot file.
        #[arg(long, value_name = "FILE")]
        plot: Option<PathBuf>,
    },
    /// Run the repetition-rate sweep and print the sustained-rate verdict.
    SweepSpeed {
        #[arg(long)]
        actuator: ActuatorArg,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Play a note-list file (one `tick pitch velocity` per line, `#` comments).
    Play { file: PathBuf },
    /// Serve UDP strike datagrams in real time until interrupted.
    Serve {
        /// UDP port to bind on 127.0.0.1; 0 picks a free port.
        #[arg(long)]
        port: u16,
        /// Stop after this many seconds instead of running until interrupted.
        #[arg(long)]
        duration: Option<f64>,
        /// Write the SPL reading stream to this CSV file.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
    /// Fit the intensity-versus-velocity line of a sweep CSV.
    Fit {
        file: PathBuf,
        /// Restrict the fit to velocities at or below this bound.
        #[arg(long)]
        max_vel: Option<u8>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => Config::from_path(path)?,
        None => Config::reference(),
    };
    match cli.command {
        Command::Home => cmd_home(&cfg),
        Command::Strike { pitch, vel } => cmd_strike(&cfg, pitch, vel),
        Command::SweepDynamics { actuator, seed, out, plot } => {
            cmd_sweep_dynamics(&cfg, actuator.into(), seed, &out, plot.as_deref())
        }
        Command::SweepSpeed { actuator, seed } => {
            cmd_sweep_speed(&cfg, actuator.into(), seed)
        }
        Command::Play { file } => cmd_play(&cfg, &file),
        Command::Serve { port, duration, csv } => cmd_serve(&cfg, port, duration, csv.as_deref()),
        Command::Fit { file, max_vel } => cmd_fit(&file, max_vel),
    }
}

fn cmd_home(cfg: &Config) -> Result<()> {
    let mut rig = Rig::new(cfg.rig_config());
    for event in rig.home_all() {
        println!("{event}");
    }
    for index in 0..strikelab::gateway::STRIKERS {
        if rig.striker(index).status() != StrikerStatus::Idle {
            bail!("striker {index} failed to home");
        }
    }
    Ok(())
}

fn cmd_strike(cfg: &Config, pitch: u8, vel: u8) -> Result<()> {
    if !(1..=127).contains(&vel) {
        bail!("velocity {vel} outside 1..=127");
    }
    if cfg.keymap.lookup(pitch).is_none() {
        bail!("pitch {pitch} is not on this instrument");
    }
    let mut rig = Rig::new(cfg.rig_config());
    for event in rig.home_all() {
        println!("{event}");
    }
    let tick = rig.current_tick();
    rig.schedule(NoteEvent { pitch, velocity: vel, tick })?;
    let (events, readings) = run_offline(cfg, &mut rig, tick)?;
    print_run(&events, &readings);
    if rig.dropped() > 0 {
        bail!("{} note(s) dropped", rig.dropped());
    }
    Ok(())
}

fn cmd_play(cfg: &Config, file: &std::path::Path) -> Result<()> {
    let text = fs::read_to_string(file)
        .with_context(|| format!("reading note file {}", file.display()))?;
    let notes = parse_note_file(&text)?;
    if notes.is_empty() {
        bail!("{} contains no notes", file.display());
    }
    let mut rig = Rig::new(cfg.rig_config());
    for event in rig.home_all() {
        println!("{event}");
    }
    let last = notes.iter().map(|n| n.tick).max().unwrap_or(0);
    for note in notes {
        rig.schedule(note)?;
    }
    let (events, readings) = run_offline(cfg, &mut rig, last)?;
    print_run(&events, &readings);
    println!("done: {} note(s) dropped", rig.dropped());
    Ok(())
}

fn cmd_sweep_dynamics(
    cfg: &Config,
    actuator: Actuator,
    seed: u64,
    out: &std::path::Path,
    plot: Option<&std::path::Path>,
) -> Result<()> {
    let records = run_dynamic_sweep(cfg, actuator, seed)?;
    fs::write(out, write_sweep_csv(&records))
        .with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = plot {
        fs::write(path, write_plot_data(&records))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let (min, max) = spl_bounds(&records);
    let fit = fit_intensity_line(&records, None)?;
    println!(
        "{} {} records: min {min:.1} dB, max {max:.1} dB, slope {:.5e} W/m^2 per step",
        records.len(),
        actuator,
        fit.slope
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_sweep_speed(cfg: &Config, actuator: Actuator, seed: u64) -> Result<()> {
    let result = run_speed_sweep(cfg, actuator, seed)?;
    for trial in &result.trials {
        match trial.failure {
            None => println!("rate {:.1} Hz: sustained", trial.rate_hz()),
            Some(mode) => println!("rate {:.1} Hz: failed ({mode})", trial.rate_hz()),
        }
    }
    println!(
        "last sustained rate {:.1} Hz, mode={}",
        result.max_rate_hz, result.failure_mode
    );
    Ok(())
}

fn cmd_fit(file: &std::path::Path, max_vel: Option<u8>) -> Result<()> {
    let text = fs::read_to_string(file)
        .with_context(|| format!("reading sweep csv {}", file.display()))?;
    let records = parse_sweep_csv(&text)?;
    let fit = fit_intensity_line(&records, max_vel)?;
    println!(
        "slope={:.5e} intercept={:.5e} residual_norm={:.5e} points={}",
        fit.slope, fit.intercept, fit.residual_norm, fit.points
    );
    Ok(())
}

static STOP: AtomicBool = AtomicBool::new(false);

extern "C" fn request_stop(_signal: libc::c_int) {
    STOP.store(true, Ordering::SeqCst);
}

fn cmd_serve(
    cfg: &Config,
    port: u16,
    duration: Option<f64>,
    csv: Option<&std::path::Path>,
) -> Result<()> {
    let socket = UdpSocket::bind(("127.0.0.1", port))
        .with_context(|| format!("binding UDP port {port}"))?;
    socket.set_nonblocking(true).context("setting the socket nonblocking")?;
    println!("listening on {}", socket.local_addr()?);
    let handler = request_stop as *const () as libc::sighandler_t;
    unsafe {
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
    }

    let mut rig = Rig::new(cfg.rig_config());
    for event in rig.home_all() {
        println!("{event}");
    }
    let mut ring = BarRing::default();
    let mut meter = SplMeter::new(cfg.acoustics);
    let mut csv_out = match csv {
        Some(path) => {
            let file = fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            let mut writer = BufWriter::new(file);
            writeln!(writer, "time_s,spl_db")?;
            Some(writer)
        }
        None => None,
    };

    let dt = cfg.tick_period;
    let end_tick = duration.map(|secs| (secs / dt).round() as u64);
    let mut datagrams = 0u64;
    let mut malformed = 0u64;
    let mut buf = [0u8; 4096];
    let start = Instant::now();

    while !STOP.load(Ordering::SeqCst) {
        if let Some(end) = end_tick {
            if rig.current_tick() >= end {
                break;
            }
        }
        loop {
            match socket.recv_from(&mut buf) {
                Ok((len, _)) => {
                    datagrams += 1;
                    // Arrivals land on the next tick boundary.
                    match parse_packet(&buf[..len], rig.current_tick() + 1) {
                        Ok(notes) => {
                            for note in notes {
                                if let Err(e) = rig.schedule(note) {
                                    eprintln!("rejected note: {e}");
                                }
                            }
                        }
                        Err(e) => {
                            malformed += 1;
                            eprintln!("malformed datagram: {e}");
                        }
                    }
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => break,
                Err(e) => return Err(e).context("udp receive"),
            }
        }
        for event in rig.tick() {
            if let EventKind::StrikeContact { impact_speed } = event.kind {
                ring.strike(impact_to_intensity(impact_speed, &cfg.acoustics));
            }
            println!("{event}");
        }
        let level = ring.step(dt, &cfg.acoustics);
        let time = rig.current_tick() as f64 * dt;
        for reading in meter.feed(IntensitySample { time, intensity: level })? {
            println!("spl t={:.1}s {:.1} dB", reading.time, reading.spl);
            if let Some(writer) = csv_out.as_mut() {
                writeln!(writer, "{:.1},{:.1}", reading.time, reading.spl)?;
            }
        }
        let deadline = start + Duration::from_secs_f64(rig.current_tick() as f64 * dt);
        let remaining = deadline.saturating_duration_since(Instant::now());
        if !remaining.is_zero() {
            std::thread::sleep(remaining);
        }
    }

    if let Some(mut writer) = csv_out {
        writer.flush().context("flushing the spl csv")?;
    }
    println!(
        "served {datagrams} datagram(s), {malformed} malformed, {} note(s) dropped",
        rig.dropped()
    );
    Ok(())
}

/// Ticks the rig with the acoustics chain attached until it is quiescent and
/// past `last_tick`, then keeps metering through one more display period so
/// the final reading is emitted.
fn run_offline(cfg: &Config, rig: &mut Rig, last_tick: u64) -> Result<(Vec<Event>, Vec<SplReading>)> {
    let dt = cfg.tick_period;
    let mut ring = BarRing::default();
    let mut meter = SplMeter::new(cfg.acoustics);
    let mut events = Vec::new();
    let mut readings = Vec::new();
    let tail_ticks = (cfg.acoustics.sample_period / dt).ceil() as u64 + 1;
    let mut tail = 0u64;
    let bound = last_tick + 600_000;
    while tail < tail_ticks {
        if rig.current_tick() > bound {
            bail!("rig failed to settle within {bound} ticks");
        }
        if rig.quiescent() && rig.current_tick() > last_tick {
            tail += 1;
        }
        let batch = rig.tick();
        for event in &batch {
            if let EventKind::StrikeContact { impact_speed } = event.kind {
                ring.strike(impact_to_intensity(impact_speed, &cfg.acoustics));
            }
        }
        events.extend(batch);
        let level = ring.step(dt, &cfg.acoustics);
        let time = rig.current_tick() as f64 * dt;
        readings.extend(meter.feed(IntensitySample { time, intensity: level })?);
    }
    Ok((events, readings))
}

fn print_run(events: &[Event], readings: &[SplReading]) {
    for event in events {
        println!("{event}");
    }
    for reading in readings {
        println!("spl t={:.1}s {:.1} dB", reading.time, reading.spl);
    }
}

fn spl_bounds(records: &[SweepRecord]) -> (f64, f64) {
    let min = records.iter().map(|r| r.spl_db).fold(f64::INFINITY, f64::min);
    let max = records.iter().map(|r| r.spl_db).fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}
