//! Gain tuning against constraint envelopes on closed-loop step responses.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::actuators::ActuatorBank;
use crate::autopilot::run_setpoints;
use crate::controller::{ControlChannel, ControllerConfig, References};
use crate::dynamics::ModelParams;
use crate::error::{invalid, Result};
use crate::identification::optimizer::{minimize, OptimizerConfig};
use crate::kinematics::VehicleState;
use crate::simulator::{Channel, SimConfig, TrajectoryLog};

/// Piecewise-linear function given by `(t, value)` breakpoints, held
/// constant outside them. At a repeated time the later breakpoint applies
/// from that instant on, which encodes jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakpoints(pub Vec<[f64; 2]>);

impl Breakpoints {
    pub fn at(&self, t: f64) -> f64 {
        let pts = &self.0;
        let i = pts.partition_point(|p| p[0] <= t);
        if i == 0 {
            return pts[0][1];
        }
        if i == pts.len() {
            return pts[i - 1][1];
        }
        let (a, b) = (pts[i - 1], pts[i]);
        a[1] + (t - a[0]) / (b[0] - a[0]) * (b[1] - a[1])
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.0.is_empty() {
            return Err(invalid(format!("{what} envelope has no breakpoints")));
        }
        if self.0.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid(format!("{what} envelope is not finite")));
        }
        if self.0.windows(2).any(|w| w[1][0] < w[0][0]) {
            return Err(invalid(format!("{what} envelope times must not decrease")));
        }
        Ok(())
    }
}

/// Lower bound `C_u(t)` and upper bound `C_o(t)` with violation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintEnvelope {
    pub lower: Breakpoints,
    pub upper: Breakpoints,
    pub weight_lower: f64,
    pub weight_upper: f64,
}

impl ConstraintEnvelope {
    pub fn validate(&self) -> Result<()> {
        self.lower.validate("lower")?;
        self.upper.validate("upper")?;
        if !(self.weight_lower > 0.0 && self.weight_upper > 0.0) {
            return Err(invalid("envelope weights must be positive"));
        }
        // both sides of every breakpoint, where the linear pieces are extremal
        for p in self.lower.0.iter().chain(&self.upper.0) {
            for t in [p[0], p[0] - 1e-9] {
                if self.lower.at(t) > self.upper.at(t) {
                    return Err(invalid(format!("lower envelope exceeds upper at t = {t}")));
                }
            }
        }
        Ok(())
    }
}

/// `(US, OS)`: `US` when `C_u(t) >= y`, `OS` when `C_o(t) <= y`.
pub fn violation_flags(env: &ConstraintEnvelope, y: f64, t: f64) -> (bool, bool) {
    (env.lower.at(t) >= y, env.upper.at(t) <= y)
}

/// Rectangle-rule violation integral of samples `y[k]` taken at `t0 + k dt`.
/// Upper violations are measured against `C_o`; `literal_upper` measures
/// them against `C_u` instead.
pub fn tuning_quality(env: &ConstraintEnvelope, y: &[f64], t0: f64, dt: f64, literal_upper: bool) -> f64 {
    y.iter()
        .enumerate()
        .map(|(k, &yk)| {
            let t = t0 + k as f64 * dt;
            let (us, os) = violation_flags(env, yk, t);
            let mut q = 0.0;
            if us {
                q += env.weight_lower * (env.lower.at(t) - yk);
            }
            if os {
                let reference = if literal_upper { env.lower.at(t) } else { env.upper.at(t) };
                q += env.weight_upper * (yk - reference);
            }
            q * dt
        })
        .sum()
}

/// Staircase of set points for one channel, each held for `step_duration_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaircaseScenario {
    pub channel: ControlChannel,
    /// Set-point value the vehicle starts at.
    #[serde(default)]
    pub initial_value: f64,
    pub levels: Vec<f64>,
    pub step_duration_s: f64,
    #[serde(default = "default_settling")]
    pub settling_s: f64,
    /// Corridor half-width as a fraction of each step size.
    #[serde(default = "default_corridor")]
    pub corridor_fraction: f64,
    /// Desired speed while a non-surge channel is tested (m/s).
    #[serde(default)]
    pub cruise_speed_m_s: f64,
    #[serde(default = "default_weight")]
    pub weight_lower: f64,
    #[serde(default = "default_weight")]
    pub weight_upper: f64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
}

fn default_settling() -> f64 {
    5.0
}

fn default_corridor() -> f64 {
    0.2
}

fn default_weight() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    crate::simulator::DEFAULT_DT
}

impl StaircaseScenario {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(invalid("staircase needs at least one level"));
        }
        if !(self.step_duration_s > self.settling_s && self.settling_s >= 0.0) {
            return Err(invalid("each step must outlast its settling allowance"));
        }
        if !(self.corridor_fraction > 0.0 && self.dt_s > 0.0) {
            return Err(invalid("corridor fraction and dt must be positive"));
        }
        let mut prev = self.initial_value;
        for l in &self.levels {
            if *l == prev {
                return Err(invalid("consecutive staircase levels must differ"));
            }
            prev = *l;
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.step_duration_s * self.levels.len() as f64
    }

    pub fn setpoint(&self, t: f64) -> f64 {
        let i = ((t / self.step_duration_s + 1e-9).floor().max(0.0) as usize).min(self.levels.len() - 1);
        self.levels[i]
    }

    /// Controller references at time `t`.
    pub fn references(&self, t: f64) -> References {
        let v = self.setpoint(t);
        let mut r = References {
            u_d: self.cruise_speed_m_s,
            ..References::default()
        };
        match self.channel {
            ControlChannel::Surge => r.u_d = v,
            ControlChannel::Heading => r.psi_d = v,
            ControlChannel::Pitch => r.theta_d = v,
            ControlChannel::Heave => r.z_d = v,
        }
        r
    }

    /// Measured signal of the tested channel.
    pub fn signal(&self) -> Channel {
        match self.channel {
            ControlChannel::Surge => Channel::U,
            ControlChannel::Heading => Channel::Psi,
            ControlChannel::Pitch => Channel::Theta,
            ControlChannel::Heave => Channel::Z,
        }
    }

    pub fn initial_state(&self) -> VehicleState {
        let mut s = VehicleState::default();
        match self.channel {
            ControlChannel::Surge => s.nu[0] = self.initial_value,
            ControlChannel::Heading => s.eta[5] = self.initial_value,
            ControlChannel::Pitch => s.eta[4] = self.initial_value,
            ControlChannel::Heave => s.eta[2] = self.initial_value,
        }
        if self.channel != ControlChannel::Surge {
            s.nu[0] = self.cruise_speed_m_s;
        }
        s
    }

    /// Corridor around each step: during the settling allowance it spans
    /// both the old and the new level, afterwards only the new one, each
    /// widened by the corridor fraction of the step size.
    pub fn envelope(&self) -> ConstraintEnvelope {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut prev = self.initial_value;
        for (i, &b) in self.levels.iter().enumerate() {
            let t0 = i as f64 * self.step_duration_s;
            let t1 = t0 + self.settling_s;
            let t2 = t0 + self.step_duration_s;
            let margin = self.corridor_fraction * (b - prev).abs();
            let (lo, hi) = (prev.min(b), prev.max(b));
            lower.extend([[t0, lo - margin], [t1, lo - margin], [t1, b - margin], [t2, b - margin]]);
            upper.extend([[t0, hi + margin], [t1, hi + margin], [t1, b + margin], [t2, b + margin]]);
            prev = b;
        }
        ConstraintEnvelope {
            lower: Breakpoints(lower),
            upper: Breakpoints(upper),
            weight_lower: self.weight_lower,
            weight_upper: self.weight_upper,
        }
    }
}

/// Search interval shared by all six points of a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainBounds {
    pub k_p: [f64; 2],
    pub k_i: [f64; 2],
    pub k_d: [f64; 2],
}

impl GainBounds {
    pub fn expand(&self) -> Vec<(f64, f64)> {
        (0..crate::controller::SCHEDULE_POINTS)
            .flat_map(|_| [self.k_p, self.k_i, self.k_d].map(|b| (b[0], b[1])))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneReport {
    pub channel: ControlChannel,
    pub initial_q: f64,
    pub final_q: f64,
    /// Violation integral of each step of the staircase with the tuned gains.
    pub step_q: Vec<f64>,
    pub q_history: Vec<(usize, f64)>,
    pub trajectory: TrajectoryLog,
    pub envelope: ConstraintEnvelope,
}

impl TuneReport {
    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "channel = {:?}", self.channel);
        let _ = writeln!(s, "initial_q = {}", self.initial_q);
        let _ = writeln!(s, "final_q = {}", self.final_q);
        for (i, q) in self.step_q.iter().enumerate() {
            let _ = writeln!(s, "step {} q = {q}", i + 1);
        }
        if self.final_q > 0.0 {
            let _ = writeln!(s, "warning: corridor still violated");
        }
        s
    }
}

/// Closed-loop staircase response of `config`.
pub fn simulate_scenario(
    scenario: &StaircaseScenario,
    config: &ControllerConfig,
    params: &ModelParams,
    bank: &ActuatorBank,
) -> Result<TrajectoryLog> {
    let mut sim = SimConfig::new(scenario.dt_s, scenario.duration());
    sim.initial_state = scenario.initial_state();
    run_setpoints(params, bank, &sim, config, |t| scenario.references(t))
}

/// Violation integral of a staircase response.
pub fn scenario_quality(scenario: &StaircaseScenario, log: &TrajectoryLog, literal_upper: bool) -> f64 {
    let y = log.channel(scenario.signal());
    tuning_quality(&scenario.envelope(), &y, 0.0, scenario.dt_s, literal_upper)
}

fn step_breakdown(scenario: &StaircaseScenario, log: &TrajectoryLog, literal_upper: bool) -> Vec<f64> {
    let env = scenario.envelope();
    let y = log.channel(scenario.signal());
    let per = (scenario.step_duration_s / scenario.dt_s).round() as usize;
    (0..scenario.levels.len())
        .map(|i| {
            let a = (i * per).min(y.len());
            let b = ((i + 1) * per).min(y.len());
            tuning_quality(&env, &y[a..b], a as f64 * scenario.dt_s, scenario.dt_s, literal_upper)
        })
        .collect()
}

/// Jointly tunes the 18 gains of the scenario's channel. Runs that fail
/// score `+inf`; the search stops once the corridor is met (`Q = 0`).
pub fn tune(
    scenario: &StaircaseScenario,
    config: &ControllerConfig,
    bounds: &GainBounds,
    params: &ModelParams,
    bank: &ActuatorBank,
    opt: &OptimizerConfig,
    literal_upper: bool,
) -> Result<(ControllerConfig, TuneReport)> {
    scenario.validate()?;
    config.validate()?;
    scenario.envelope().validate()?;
    let channel = scenario.channel;
    let start = config.channel(channel).schedule.to_vector();
    let b = bounds.expand();
    for (v, (lo, hi)) in start.iter().zip(&b) {
        if !(*v >= *lo && *v <= *hi) {
            return Err(invalid(format!("initial gain {v} lies outside [{lo}, {hi}]")));
        }
    }
    let candidate = |x: &[f64]| {
        let mut c = config.clone();
        let ch = c.channel_mut(channel);
        ch.schedule = ch.schedule.with_vector(x);
        c
    };
    let objective = |x: &[f64]| {
        simulate_scenario(scenario, &candidate(x), params, bank)
            .map(|log| scenario_quality(scenario, &log, literal_upper))
            .unwrap_or(f64::INFINITY)
    };
    let opt = OptimizerConfig {
        target: Some(opt.target.unwrap_or(0.0)),
        ..*opt
    };
    let search = minimize(&opt, &objective, &b, &start)?;
    let tuned = candidate(&search.best);
    let trajectory = simulate_scenario(scenario, &tuned, params, bank)?;
    let final_q = scenario_quality(scenario, &trajectory, literal_upper);
    if final_q > 0.0 {
        log::warn!("tuning ended with Q = {final_q:.4e}; the corridor may be infeasible");
    }
    Ok((
        tuned,
        TuneReport {
            channel,
            initial_q: search.initial_q,
            final_q,
            step_q: step_breakdown(scenario, &trajectory, literal_upper),
            q_history: search.history,
            trajectory,
            envelope: scenario.envelope(),
        },
    ))
}
