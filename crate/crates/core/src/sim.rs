//! Fixed-step simulation of a lead/ego pair with a lossy, delayed V2V link,
//! a first-order ego actuator and injected step disturbances.
//!
//! Tick `k` at `t = k / frequency`:
//! 1. apply due events to the plant, set the lead acceleration from the profile
//! 2. send the lead state into the channel, read what arrives this tick
//! 3. measure (gap and ego speed locally, lead speed and acceleration via V2V)
//! 4. solve for the command, log the tick
//! 5. integrate both vehicles over one tick, update the actuator

use std::collections::VecDeque;
use std::io::{self, Write};

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kinematics::{RelativeState, VehicleState};
use crate::lp::LpStatus;
use crate::mpc::{ControlMode, Controller, ControllerConfig, CostSpec, HorizonSpec};
use crate::safety::{min_safe_distance, BrakingSpec, ComfortSpec};

/// Piecewise-constant lead acceleration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadProfile {
    pub initial_speed_mps: f64,
    /// `(start time, acceleration)`; each segment lasts until the next start.
    pub segments: Vec<ProfileSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSegment {
    pub start_s: f64,
    pub accel_mps2: f64,
}

/// On-ramp acceleration, cruise, mild braking, then emergency braking.
pub fn default_profile() -> LeadProfile {
    let seg = |start_s, accel_mps2| ProfileSegment { start_s, accel_mps2 };
    LeadProfile {
        initial_speed_mps: 15.0,
        segments: vec![seg(0.0, 2.0), seg(10.0, 0.0), seg(20.0, -1.0), seg(30.0, -10.0)],
    }
}

impl LeadProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_speed_mps >= 0.0 && self.initial_speed_mps.is_finite()) {
            return Err(invalid("profile initial speed must be non-negative"));
        }
        if self.segments.iter().any(|s| !s.start_s.is_finite() || !s.accel_mps2.is_finite()) {
            return Err(invalid("profile segments must be finite"));
        }
        if self.segments.windows(2).any(|w| w[1].start_s <= w[0].start_s) {
            return Err(invalid("profile segment times must be strictly increasing"));
        }
        Ok(())
    }

    /// Commanded acceleration at `t`; zero before the first segment.
    pub fn acceleration_at(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .rev()
            .find(|s| s.start_s <= t)
            .map_or(0.0, |s| s.accel_mps2)
    }

    /// Speed at `t` with the stop floor applied (a braking vehicle stays stopped).
    pub fn speed_at(&self, t: f64) -> f64 {
        let mut v = self.initial_speed_mps;
        let mut now = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            let end = self.segments.get(i + 1).map_or(f64::INFINITY, |s| s.start_s);
            let start = seg.start_s.max(0.0);
            if end <= now || start >= t {
                continue;
            }
            let span = end.min(t) - start.max(now);
            v = (v + seg.accel_mps2 * span).max(0.0);
            now = end.min(t);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub delay_s: f64,
    pub loss_probability: f64,
    pub seed: u64,
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.delay_s >= 0.0 && self.delay_s.is_finite()) {
            return Err(invalid("channel delay must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(invalid("loss probability must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Whole ticks a message spends in flight.
    pub fn delay_ticks(&self, sample_time: f64) -> usize {
        (self.delay_s / sample_time - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorSpec {
    pub time_constant_s: f64,
}

impl ActuatorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_constant_s > 0.0 && self.time_constant_s.is_finite()) {
            return Err(invalid("actuator time constant must be positive"));
        }
        Ok(())
    }

    /// Per-tick update gain of the exactly discretized lag.
    pub fn gain(&self, sample_time: f64) -> f64 {
        1.0 - (-sample_time / self.time_constant_s).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventTarget {
    /// Shifts the lead position, in meters.
    Distance,
    /// Shifts the lead speed, in m/s (floored at zero).
    LeadSpeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceEvent {
    pub time_s: f64,
    pub target: EventTarget,
    /// Meters for `distance`, m/s for `lead_speed`.
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub distance_std_m: f64,
    pub lead_speed_std_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSettings {
    pub mode: ControlMode,
    pub horizon_steps: usize,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// Terminal weights; `null` reuses `q`.
    #[serde(default)]
    pub terminal: Option<Vec<Vec<f64>>>,
    pub slack_weight: f64,
    /// Disturbance direction `W` on `[d, v_l, v_e]` per tick.
    pub disturbance: [f64; 3],
    #[serde(default)]
    pub prestabilize: bool,
    pub max_iters: usize,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            mode: ControlMode::Robust,
            horizon_steps: 10,
            q: vec![vec![100.0, 0.0, 0.0], vec![0.0, 1.0, -1.0]],
            r: vec![vec![1.0]],
            terminal: None,
            slack_weight: 1000.0,
            disturbance: [0.0, 1.2, 0.0],
            prestabilize: false,
            max_iters: 5000,
        }
    }
}

fn matrix(rows: &[Vec<f64>], cols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err(invalid(format!("{name} must be a non-empty list of {cols}-element rows")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

impl ControllerSettings {
    pub fn cost(&self) -> Result<CostSpec> {
        let q = matrix(&self.q, 3, "q")?;
        let terminal = match &self.terminal {
            Some(p) => matrix(p, 3, "terminal")?,
            None => q.clone(),
        };
        let cost = CostSpec {
            q,
            r: matrix(&self.r, 1, "r")?,
            terminal,
            slack_weight: self.slack_weight,
        };
        cost.validate()?;
        Ok(cost)
    }
}

/// Scenario definition; field names carry their units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub initial_distance_m: f64,
    pub ego_speed_mps: f64,
    pub max_speed_mps: f64,
    pub max_accel_mps2: f64,
    pub min_accel_mps2: f64,
    pub min_ttc_s: f64,
    /// Worst-case end-to-end delay used by the safety distance.
    pub safety_delay_s: f64,
    pub lead_braking_mps2: f64,
    pub ego_braking_mps2: f64,
    pub frequency_hz: f64,
    pub duration_s: f64,
    pub profile: LeadProfile,
    pub channel: ChannelSpec,
    /// `null` applies commands instantly.
    pub actuator: Option<ActuatorSpec>,
    pub events: Vec<DisturbanceEvent>,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    pub controller: ControllerSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            initial_distance_m: 15.0,
            ego_speed_mps: 15.0,
            max_speed_mps: 40.0,
            max_accel_mps2: 2.5,
            min_accel_mps2: -2.5,
            min_ttc_s: 2.0,
            safety_delay_s: 0.3,
            lead_braking_mps2: 10.0,
            ego_braking_mps2: 10.0,
            frequency_hz: 20.0,
            duration_s: 40.0,
            profile: default_profile(),
            channel: ChannelSpec {
                delay_s: 0.022,
                loss_probability: 0.01,
                seed: 1,
            },
            actuator: Some(ActuatorSpec { time_constant_s: 0.1 }),
            events: vec![
                DisturbanceEvent {
                    time_s: 17.0,
                    target: EventTarget::Distance,
                    amplitude: -3.0,
                },
                DisturbanceEvent {
                    time_s: 22.0,
                    target: EventTarget::LeadSpeed,
                    amplitude: -3.0,
                },
            ],
            noise: None,
            controller: ControllerSettings::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn sample_time(&self) -> f64 {
        1.0 / self.frequency_hz
    }

    pub fn braking(&self) -> BrakingSpec {
        BrakingSpec {
            ego_braking: self.ego_braking_mps2,
            lead_braking: self.lead_braking_mps2,
            delay: self.safety_delay_s,
        }
    }

    pub fn comfort(&self) -> ComfortSpec {
        ComfortSpec {
            min_time_to_contact: self.min_ttc_s,
            min_acceleration: self.min_accel_mps2,
            max_acceleration: self.max_accel_mps2,
            max_speed: self.max_speed_mps,
        }
    }

    pub fn controller_config(&self) -> Result<ControllerConfig> {
        let c = &self.controller;
        Ok(ControllerConfig {
            mode: c.mode,
            cost: c.cost()?,
            horizon: HorizonSpec {
                steps: c.horizon_steps,
                sample_time: self.sample_time(),
            },
            braking: self.braking(),
            comfort: self.comfort(),
            disturbance: Vector3::from(c.disturbance),
            prestabilize: c.prestabilize,
            max_iters: c.max_iters,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(invalid("frequency_hz must be positive"));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration_s must be non-negative"));
        }
        if !(self.initial_distance_m.is_finite()) {
            return Err(invalid("initial_distance_m must be finite"));
        }
        if !(self.ego_speed_mps >= 0.0 && self.ego_speed_mps <= self.max_speed_mps) {
            return Err(invalid("ego_speed_mps must lie in [0, max_speed_mps]"));
        }
        self.braking().validate()?;
        self.comfort().validate()?;
        self.profile.validate()?;
        self.channel.validate()?;
        if let Some(act) = &self.actuator {
            act.validate()?;
        }
        if let Some(noise) = &self.noise {
            if !(noise.distance_std_m >= 0.0 && noise.lead_speed_std_mps >= 0.0) {
                return Err(invalid("noise standard deviations must be non-negative"));
            }
        }
        if self.events.iter().any(|e| !e.time_s.is_finite() || !e.amplitude.is_finite()) {
            return Err(invalid("events must have finite time and amplitude"));
        }
        if self.controller.max_iters == 0 {
            return Err(invalid("controller.max_iters must be positive"));
        }
        self.controller_config().map(|_| ())
    }
}

/// One logged tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: f64,
    pub lead: VehicleState,
    pub ego: VehicleState,
    /// What the controller saw this tick.
    pub measured: RelativeState,
    pub command: f64,
    /// Ego acceleration held over this tick.
    pub actuated: f64,
    /// Minimum safety distance at the true speeds.
    pub d_safe: f64,
    /// `d - d_safe` at the true state.
    pub safety_margin: f64,
    /// `d - t_c,min (v_e - v_l)` at the true state.
    pub ttc_margin: f64,
    pub status: LpStatus,
    pub fallback: bool,
    /// The V2V message due this tick was lost; the previous value was held.
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub sample_time: f64,
    pub records: Vec<TraceRecord>,
}

pub const CSV_COLUMNS: [&str; 18] = [
    "time",
    "lead_position",
    "lead_velocity",
    "lead_acceleration",
    "ego_position",
    "ego_velocity",
    "ego_acceleration",
    "measured_distance",
    "measured_lead_velocity",
    "measured_ego_velocity",
    "command",
    "actuated",
    "d_safe",
    "safety_margin",
    "ttc_margin",
    "status",
    "fallback",
    "dropped",
];

/// `x` with 9 significant digits, plain notation where reasonable.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x.is_infinite() { format!("{x}") } else { "0".into() };
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&exp) {
        return format!("{x:.8e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

impl SimTrace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", CSV_COLUMNS.join(","))?;
        for r in &self.records {
            let nums = [
                r.time,
                r.lead.position,
                r.lead.velocity,
                r.lead.acceleration,
                r.ego.position,
                r.ego.velocity,
                r.ego.acceleration,
                r.measured.distance,
                r.measured.lead_velocity,
                r.measured.ego_velocity,
                r.command,
                r.actuated,
                r.d_safe,
                r.safety_margin,
                r.ttc_margin,
            ];
            let mut line: Vec<String> = nums.iter().map(|v| format_sig9(*v)).collect();
            line.push(format!("{:?}", r.status));
            line.push(u8::from(r.fallback).to_string());
            line.push(u8::from(r.dropped).to_string());
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }

    /// Records with `t0 <= time <= t1`.
    pub fn window(&self, t0: f64, t1: f64) -> impl Iterator<Item = &TraceRecord> {
        let eps = 1e-9;
        self.records.iter().filter(move |r| r.time >= t0 - eps && r.time <= t1 + eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub ticks: usize,
    pub min_clearance_m: f64,
    pub min_safety_margin_m: f64,
    pub violation_duration_s: f64,
    pub rms_speed_error_mps: f64,
    pub max_abs_command_mps2: f64,
    pub dropped_packets: usize,
    pub infeasible_solves: usize,
}

pub fn metrics(trace: &SimTrace) -> Result<SimMetrics> {
    if trace.records.is_empty() {
        return Err(invalid("cannot summarize an empty trace"));
    }
    let recs = &trace.records;
    let fold_min = |f: fn(&TraceRecord) -> f64| recs.iter().map(f).fold(f64::INFINITY, f64::min);
    let violations = recs.iter().filter(|r| r.safety_margin < 0.0).count();
    let sq: f64 = recs.iter().map(|r| (r.ego.velocity - r.lead.velocity).powi(2)).sum();
    Ok(SimMetrics {
        ticks: recs.len(),
        min_clearance_m: fold_min(|r| r.lead.position - r.ego.position),
        min_safety_margin_m: fold_min(|r| r.safety_margin),
        violation_duration_s: violations as f64 * trace.sample_time,
        rms_speed_error_mps: (sq / recs.len() as f64).sqrt(),
        max_abs_command_mps2: recs.iter().map(|r| r.command.abs()).fold(0.0, f64::max),
        dropped_packets: recs.iter().filter(|r| r.dropped).count(),
        infeasible_solves: recs.iter().filter(|r| r.status != LpStatus::Optimal).count(),
    })
}

#[derive(Debug, Clone, Copy)]
struct LeadMessage {
    velocity: f64,
    acceleration: f64,
}

/// Fixed-delay link with independent per-message loss and hold-last-value.
struct Channel {
    in_flight: VecDeque<Option<LeadMessage>>,
    delay_ticks: usize,
    loss_probability: f64,
    held: LeadMessage,
}

impl Channel {
    fn transmit(&mut self, msg: LeadMessage, rng: &mut ChaCha8Rng) -> (LeadMessage, bool) {
        let lost = self.loss_probability > 0.0 && rng.random::<f64>() < self.loss_probability;
        self.in_flight.push_back((!lost).then_some(msg));
        let mut dropped = false;
        if self.in_flight.len() > self.delay_ticks {
            match self.in_flight.pop_front().flatten() {
                Some(m) => self.held = m,
                None => dropped = true,
            }
        }
        (self.held, dropped)
    }
}

/// Output of a control policy for one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub u: f64,
    pub status: LpStatus,
    pub fallback: bool,
}

impl Command {
    pub fn constant(u: f64) -> Self {
        Self {
            u,
            status: LpStatus::Optimal,
            fallback: false,
        }
    }
}

/// Run the scenario with the configured MPC. Infeasible solves are logged, not fatal.
pub fn run(cfg: &ScenarioConfig) -> Result<SimTrace> {
    let mut controller = Controller::new(cfg.controller_config()?)?;
    let trace = run_with(cfg, |_, x, a_l| {
        let d = controller.control_step(x, a_l)?;
        Ok(Command {
            u: d.u,
            status: d.status,
            fallback: d.fallback,
        })
    })?;
    log::debug!(
        "{:?} run: {} of {} solves fell back to braking",
        cfg.controller.mode,
        controller.infeasible_solves(),
        controller.solves()
    );
    Ok(trace)
}

/// Run the scenario with an arbitrary policy `(time, measured state, lead acceleration) -> command`.
pub fn run_with<P>(cfg: &ScenarioConfig, mut policy: P) -> Result<SimTrace>
where
    P: FnMut(f64, &RelativeState, f64) -> Result<Command>,
{
    cfg.validate()?;
    let ts = cfg.sample_time();
    let ticks = (cfg.duration_s / ts + 1e-9).floor() as usize + 1;
    let braking = cfg.braking();

    let mut lead = VehicleState::new(cfg.initial_distance_m, cfg.profile.initial_speed_mps, 0.0);
    let mut ego = VehicleState::new(0.0, cfg.ego_speed_mps, 0.0);
    let mut channel = Channel {
        in_flight: VecDeque::with_capacity(8),
        delay_ticks: cfg.channel.delay_ticks(ts),
        loss_probability: cfg.channel.loss_probability,
        held: LeadMessage {
            velocity: lead.velocity,
            acceleration: cfg.profile.acceleration_at(0.0),
        },
    };
    let mut link_rng = ChaCha8Rng::seed_from_u64(cfg.channel.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.channel.seed);
    noise_rng.set_stream(1);
    let noise = match cfg.noise {
        Some(n) => Some((
            Normal::new(0.0, n.distance_std_m).map_err(|e| invalid(e.to_string()))?,
            Normal::new(0.0, n.lead_speed_std_mps).map_err(|e| invalid(e.to_string()))?,
        )),
        None => None,
    };
    let alpha = cfg.actuator.map(|a| a.gain(ts));
    let mut applied = vec![false; cfg.events.len()];
    let mut records = Vec::with_capacity(ticks);

    for k in 0..ticks {
        let t = k as f64 * ts;
        for (event, done) in cfg.events.iter().zip(applied.iter_mut()) {
            if !*done && t >= event.time_s - 1e-9 {
                *done = true;
                match event.target {
                    EventTarget::Distance => lead.position += event.amplitude,
                    EventTarget::LeadSpeed => lead.velocity = (lead.velocity + event.amplitude).max(0.0),
                }
            }
        }
        lead.acceleration = cfg.profile.acceleration_at(t);
        if lead.velocity <= 0.0 && lead.acceleration < 0.0 {
            lead.acceleration = 0.0;
        }

        let sent = LeadMessage {
            velocity: lead.velocity,
            acceleration: lead.acceleration,
        };
        let (received, dropped) = channel.transmit(sent, &mut link_rng);
        let mut measured = RelativeState::new(lead.position - ego.position, received.velocity, ego.velocity);
        if let Some((dn, vn)) = &noise {
            measured.distance += dn.sample(&mut noise_rng);
            measured.lead_velocity = (measured.lead_velocity + vn.sample(&mut noise_rng)).max(0.0);
        }
        // the safety model is undefined for a negative gap; the controller sees zero
        let seen = RelativeState::new(
            measured.distance.max(0.0),
            measured.lead_velocity.max(0.0),
            measured.ego_velocity.max(0.0),
        );
        let decision = policy(t, &seen, received.acceleration)?;
        let command = decision.u;

        if alpha.is_none() {
            ego.acceleration = command;
        }
        if ego.velocity <= 0.0 && ego.acceleration < 0.0 {
            ego.acceleration = 0.0;
        }
        let d = lead.position - ego.position;
        let d_safe = min_safe_distance(ego.velocity, lead.velocity, &braking)?;
        records.push(TraceRecord {
            time: t,
            lead,
            ego,
            measured,
            command,
            actuated: ego.acceleration,
            d_safe,
            safety_margin: d - d_safe,
            ttc_margin: d - cfg.min_ttc_s * (ego.velocity - lead.velocity),
            status: decision.status,
            fallback: decision.fallback,
            dropped,
        });

        lead.advance(ts);
        ego.advance(ts);
        if let Some(alpha) = alpha {
            ego.acceleration += alpha * (command - ego.acceleration);
        }
    }
    Ok(SimTrace {
        sample_time: ts,
        records,
    })
}
