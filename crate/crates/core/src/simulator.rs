//! Fixed-step RK4 integration of the coupled pose/velocity equations under
//! actuator commands, and the trajectory log it produces.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::actuators::{ActuatorBank, ActuatorChains, ActuatorVector, ACTUATOR_COUNT};
use crate::dynamics::{DofMask, ForceMoment, VehicleModel};
use crate::error::{invalid, Error, Result};
use crate::kinematics::{pose_rate, relative_velocity, wrap_angle, wrap_angles, CurrentVelocity, VehicleState};

pub const DEFAULT_DT: f64 = 0.01;

/// Water current seen by the vehicle over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentProfile {
    /// Body-frame current `[u_c, v_c, w_c]` in m/s.
    Constant([f64; 3]),
    /// Samples `[t_s, u_c, v_c, w_c]`, linearly interpolated and held at the ends.
    Series(Vec<[f64; 4]>),
}

impl Default for CurrentProfile {
    fn default() -> Self {
        CurrentProfile::Constant([0.0; 3])
    }
}

impl CurrentProfile {
    pub fn at(&self, t: f64) -> CurrentVelocity {
        match self {
            CurrentProfile::Constant(c) => CurrentVelocity::new(c[0], c[1], c[2]),
            CurrentProfile::Series(samples) => {
                let pick = |s: &[f64; 4]| CurrentVelocity::new(s[1], s[2], s[3]);
                match samples.iter().position(|s| s[0] > t) {
                    None => samples.last().map(pick).unwrap_or_default(),
                    Some(0) => pick(&samples[0]),
                    Some(i) => {
                        let (a, b) = (&samples[i - 1], &samples[i]);
                        let w = (t - a[0]) / (b[0] - a[0]);
                        let lerp = |k: usize| a[k] + w * (b[k] - a[k]);
                        CurrentVelocity::new(lerp(1), lerp(2), lerp(3))
                    }
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let CurrentProfile::Series(s) = self {
            if s.is_empty() {
                return Err(invalid("current series needs at least one sample"));
            }
            if s.windows(2).any(|w| w[1][0] <= w[0][0]) {
                return Err(invalid("current series times must increase strictly"));
            }
        }
        Ok(())
    }
}

/// Integration settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub v_const: DofMask,
    #[serde(default)]
    pub initial_state: VehicleState,
    #[serde(default)]
    pub current: CurrentProfile,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

impl SimConfig {
    pub fn new(dt_s: f64, duration_s: f64) -> Self {
        Self {
            dt_s,
            duration_s,
            v_const: DofMask::ALL,
            initial_state: VehicleState::default(),
            current: CurrentProfile::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(invalid("dt_s must be positive"));
        }
        if !(self.duration_s >= self.dt_s) {
            return Err(invalid("duration_s must be at least one step"));
        }
        if !self.initial_state.is_finite() {
            return Err(invalid("initial state must be finite"));
        }
        self.current.validate()
    }

    /// Number of logged samples, `floor(duration / dt) + 1`.
    pub fn sample_count(&self) -> usize {
        (self.duration_s / self.dt_s + 1e-9).floor() as usize + 1
    }
}

/// Observable log columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    X,
    Y,
    Z,
    Phi,
    Theta,
    Psi,
    U,
    V,
    W,
    P,
    Q,
    R,
}

impl Channel {
    pub fn is_angle(self) -> bool {
        matches!(self, Channel::Phi | Channel::Theta | Channel::Psi)
    }

    pub fn read(self, state: &VehicleState) -> f64 {
        let i = self as usize;
        if i < 6 {
            state.eta[i]
        } else {
            state.nu[i - 6]
        }
    }

    /// Difference between two samples; angles are compared on the circle.
    pub fn difference(self, a: f64, b: f64) -> f64 {
        if self.is_angle() {
            wrap_angle(a - b)
        } else {
            a - b
        }
    }
}

/// One sample of a trajectory log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// Commanded revolution speeds `u_A` (rpm).
    pub commands: ActuatorVector,
    /// Actual revolution speeds after the motor chain (rpm).
    pub actual: ActuatorVector,
    pub state: VehicleState,
}

/// Uniformly sampled record of commands, motor speeds and vehicle state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
}

const STATE_COLUMNS: [&str; 12] = [
    "x", "y", "z", "phi", "theta", "psi", "u", "v", "w", "p", "q", "r",
];

pub fn log_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=ACTUATOR_COUNT).map(|i| format!("n{i}")));
    h.extend((1..=ACTUATOR_COUNT).map(|i| format!("na{i}")));
    h.extend(STATE_COLUMNS.iter().map(|s| s.to_string()));
    h
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Sample spacing, taken from the first two rows.
    pub fn dt(&self) -> Option<f64> {
        (self.rows.len() >= 2).then(|| self.rows[1].t - self.rows[0].t)
    }

    pub fn duration(&self) -> f64 {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn channel(&self, ch: Channel) -> Vec<f64> {
        self.rows.iter().map(|r| ch.read(&r.state)).collect()
    }

    /// Checks strictly increasing, uniformly spaced time stamps.
    pub fn validate(&self) -> Result<()> {
        if self.rows.len() < 2 {
            return Err(invalid("trajectory log needs at least two rows"));
        }
        let dt = self.rows[1].t - self.rows[0].t;
        if !(dt > 0.0) {
            return Err(invalid("log time stamps must increase"));
        }
        for (k, r) in self.rows.iter().enumerate() {
            let expected = self.rows[0].t + k as f64 * dt;
            if (r.t - expected).abs() > 1e-6 * dt.max(1.0) {
                return Err(invalid(format!("log row {k} breaks uniform spacing (t = {})", r.t)));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(log_header())?;
        for r in &self.rows {
            let mut rec = Vec::with_capacity(25);
            rec.push(r.t.to_string());
            rec.extend(r.commands.iter().map(|v| v.to_string()));
            rec.extend(r.actual.iter().map(|v| v.to_string()));
            rec.extend(r.state.eta.iter().map(|v| v.to_string()));
            rec.extend(r.state.nu.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != log_header() {
            return Err(invalid(format!(
                "trajectory log header must be `{}`",
                log_header().join(",")
            )));
        }
        let mut rows = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| invalid(format!("log row {}: {e}", line + 1)))?;
            if vals.len() != 25 {
                return Err(invalid(format!("log row {} has {} columns", line + 1, vals.len())));
            }
            rows.push(LogRow {
                t: vals[0],
                commands: std::array::from_fn(|i| vals[1 + i]),
                actual: std::array::from_fn(|i| vals[7 + i]),
                state: VehicleState {
                    eta: Vector6::from_row_slice(&vals[13..19]),
                    nu: Vector6::from_row_slice(&vals[19..25]),
                },
            });
        }
        let log = TrajectoryLog { rows };
        log.validate()?;
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Supplies actuator commands at each control sample.
pub trait CommandSource {
    fn command(&mut self, step: usize, t: f64, state: &VehicleState) -> Result<ActuatorVector>;
}

impl<F> CommandSource for F
where
    F: FnMut(usize, f64, &VehicleState) -> ActuatorVector,
{
    fn command(&mut self, step: usize, t: f64, state: &VehicleState) -> Result<ActuatorVector> {
        Ok(self(step, t, state))
    }
}

/// Piecewise-constant command table, each row held until the next one starts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommandSchedule {
    pub rows: Vec<(f64, ActuatorVector)>,
}

impl CommandSchedule {
    pub fn new(rows: Vec<(f64, ActuatorVector)>) -> Result<Self> {
        if rows.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("command schedule times must increase strictly"));
        }
        Ok(Self { rows })
    }

    pub fn at(&self, t: f64) -> ActuatorVector {
        // small tolerance so a row starting at k*dt is active at that sample
        let idx = self.rows.partition_point(|(t0, _)| *t0 <= t + 1e-9);
        if idx == 0 {
            [0.0; ACTUATOR_COUNT]
        } else {
            self.rows[idx - 1].1
        }
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let expected: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=ACTUATOR_COUNT).map(|i| format!("n{i}")))
            .collect();
        if header != expected {
            return Err(invalid(format!("command table header must be `{}`", expected.join(","))));
        }
        let mut rows = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| invalid(format!("command row {}: {e}", line + 1)))?;
            if vals.len() != 7 {
                return Err(invalid(format!("command row {} needs 7 columns", line + 1)));
            }
            rows.push((vals[0], std::array::from_fn(|i| vals[1 + i])));
        }
        Self::new(rows)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=ACTUATOR_COUNT).map(|i| format!("n{i}")));
        w.write_record(&header)?;
        for (t, n) in &self.rows {
            let mut rec = vec![t.to_string()];
            rec.extend(n.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl CommandSource for CommandSchedule {
    fn command(&mut self, _step: usize, t: f64, _state: &VehicleState) -> Result<ActuatorVector> {
        Ok(self.at(t))
    }
}

/// Replays the commanded column of a recorded log sample by sample.
pub struct LogReplay<'a> {
    log: &'a TrajectoryLog,
}

impl<'a> LogReplay<'a> {
    pub fn new(log: &'a TrajectoryLog) -> Self {
        Self { log }
    }
}

impl CommandSource for LogReplay<'_> {
    fn command(&mut self, step: usize, _t: f64, _state: &VehicleState) -> Result<ActuatorVector> {
        Ok(self
            .log
            .rows
            .get(step)
            .or(self.log.rows.last())
            .map(|r| r.commands)
            .unwrap_or([0.0; ACTUATOR_COUNT]))
    }
}

/// Vehicle model plus the mutable actuator chain state of one run.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: VehicleModel,
    bank: ActuatorBank,
    chains: ActuatorChains,
    mask: DofMask,
    current: CurrentProfile,
    dt: f64,
}

impl Simulator {
    pub fn new(model: VehicleModel, bank: ActuatorBank, config: &SimConfig) -> Result<Self> {
        config.validate()?;
        bank.validate()?;
        Ok(Self {
            chains: ActuatorChains::new(&bank, config.dt_s),
            model,
            bank,
            mask: config.v_const,
            current: config.current.clone(),
            dt: config.dt_s,
        })
    }

    pub fn model(&self) -> &VehicleModel {
        &self.model
    }

    pub fn bank(&self) -> &ActuatorBank {
        &self.bank
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Current actual motor speeds.
    pub fn actual_rpm(&self) -> ActuatorVector {
        self.chains.actual()
    }

    /// Starts the motor chains in steady state at the given speeds.
    pub fn settle_motors(&mut self, n_a: &ActuatorVector) {
        self.chains.settle_at(n_a);
    }

    /// Actuator wrench produced by the current motor speeds in `state`.
    pub fn actuator_wrench(&self, state: &VehicleState, t: f64) -> ForceMoment {
        let nu_r = relative_velocity(&state.nu, &self.current.at(t));
        self.bank.tau(&self.chains.actual(), nu_r[0], nu_r[2])
    }

    fn derivative(&self, s: &VehicleState, tau: &ForceMoment, t: f64) -> Result<(Vector6<f64>, Vector6<f64>)> {
        let eta_dot = pose_rate(&s.eta, &s.nu)?;
        let nu_dot = self
            .model
            .acceleration(s, &self.current.at(t), tau, &self.mask);
        Ok((eta_dot, nu_dot))
    }

    /// One RK4 step. The actuator wrench is evaluated from the motor speeds
    /// at the start of the step and held; the motor chains then consume
    /// `commands` for the next sample.
    pub fn step(&mut self, state: &VehicleState, commands: &ActuatorVector, t: f64) -> Result<VehicleState> {
        let dt = self.dt;
        let tau = self.actuator_wrench(state, t);
        let shift = |s: &VehicleState, k: &(Vector6<f64>, Vector6<f64>), h: f64| VehicleState {
            eta: s.eta + k.0 * h,
            nu: s.nu + k.1 * h,
        };
        let k1 = self.derivative(state, &tau, t)?;
        let k2 = self.derivative(&shift(state, &k1, dt / 2.0), &tau, t + dt / 2.0)?;
        let k3 = self.derivative(&shift(state, &k2, dt / 2.0), &tau, t + dt / 2.0)?;
        let k4 = self.derivative(&shift(state, &k3, dt), &tau, t + dt)?;
        let next = VehicleState {
            eta: wrap_angles(&(state.eta + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (dt / 6.0))),
            nu: state.nu + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (dt / 6.0),
        };
        self.chains.advance(commands);
        if !next.is_finite() {
            return Err(Error::NonFinite { t: t + dt });
        }
        Ok(next)
    }

    /// Integrates from `initial` for `samples` log rows.
    pub fn run_from(
        &mut self,
        initial: VehicleState,
        samples: usize,
        source: &mut dyn CommandSource,
    ) -> Result<TrajectoryLog> {
        let mut rows = Vec::with_capacity(samples);
        let mut state = initial;
        for k in 0..samples {
            let t = k as f64 * self.dt;
            let commands = source.command(k, t, &state)?;
            rows.push(LogRow {
                t,
                commands,
                actual: self.chains.actual(),
                state,
            });
            if k + 1 < samples {
                state = self.step(&state, &commands, t)?;
            }
        }
        Ok(TrajectoryLog { rows })
    }
}

/// Runs a full simulation from the configured initial state.
pub fn run(
    model: &VehicleModel,
    bank: &ActuatorBank,
    config: &SimConfig,
    source: &mut dyn CommandSource,
) -> Result<TrajectoryLog> {
    let mut sim = Simulator::new(model.clone(), *bank, config)?;
    sim.run_from(config.initial_state, config.sample_count(), source)
}
