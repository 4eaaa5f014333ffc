//! Four decoupled PID loops (surge speed, heading, pitch, depth) with
//! gain scheduling over desired speed, restoring-force feed-forward and
//! pseudo-inverse thrust allocation.

use serde::{Deserialize, Serialize};

use crate::actuators::{
    inverse_thrust, static_limit, thrust, ActuatorBank, ActuatorId, ActuatorVector, Allocator, ACTUATOR_COUNT,
};
use crate::dynamics::{restoring, ForceMoment, ModelParams};
use crate::error::{invalid, Error, Result};
use crate::kinematics::{wrap_angle, VehicleState};

pub const SCHEDULE_POINTS: usize = 6;
/// Desired-speed range covered by every schedule (m/s).
pub const SCHEDULE_RANGE: (f64, f64) = (-5.0, 5.0);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
}

impl Gains {
    pub fn is_zero(&self) -> bool {
        self.k_p == 0.0 && self.k_i == 0.0 && self.k_d == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePoint {
    pub u_d_m_s: f64,
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
}

impl SchedulePoint {
    pub fn gains(&self) -> Gains {
        Gains {
            k_p: self.k_p,
            k_i: self.k_i,
            k_d: self.k_d,
        }
    }
}

/// Gains at six supporting speeds, interpolated linearly in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSchedule {
    pub points: Vec<SchedulePoint>,
}

impl GainSchedule {
    /// Same gains at evenly spaced speeds over the full range.
    pub fn uniform(gains: Gains) -> Self {
        let (lo, hi) = SCHEDULE_RANGE;
        let points = (0..SCHEDULE_POINTS)
            .map(|i| SchedulePoint {
                u_d_m_s: lo + (hi - lo) * i as f64 / (SCHEDULE_POINTS - 1) as f64,
                k_p: gains.k_p,
                k_i: gains.k_i,
                k_d: gains.k_d,
            })
            .collect();
        Self { points }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != SCHEDULE_POINTS {
            return Err(invalid(format!(
                "gain schedule needs {SCHEDULE_POINTS} points, got {}",
                self.points.len()
            )));
        }
        if self.points.windows(2).any(|w| w[1].u_d_m_s <= w[0].u_d_m_s) {
            return Err(invalid("schedule speeds must increase strictly"));
        }
        let (lo, hi) = SCHEDULE_RANGE;
        if self.points[0].u_d_m_s > lo || self.points[SCHEDULE_POINTS - 1].u_d_m_s < hi {
            return Err(invalid("schedule speeds must cover -5 to 5 m/s"));
        }
        for p in &self.points {
            if !(p.k_p.is_finite() && p.k_i.is_finite() && p.k_d.is_finite() && p.u_d_m_s.is_finite()) {
                return Err(invalid("gains must be finite"));
            }
            if p.k_i < 0.0 {
                return Err(invalid("integral gains must be non-negative"));
            }
        }
        Ok(())
    }

    /// Gains at `u_d`, clamped to the outermost points.
    pub fn at(&self, u_d: f64) -> Gains {
        let pts = &self.points;
        if u_d <= pts[0].u_d_m_s {
            return pts[0].gains();
        }
        let last = pts.len() - 1;
        if u_d >= pts[last].u_d_m_s {
            return pts[last].gains();
        }
        let i = pts.partition_point(|p| p.u_d_m_s <= u_d);
        let (a, b) = (&pts[i - 1], &pts[i]);
        if u_d == a.u_d_m_s {
            return a.gains();
        }
        let w = (u_d - a.u_d_m_s) / (b.u_d_m_s - a.u_d_m_s);
        Gains {
            k_p: a.k_p + w * (b.k_p - a.k_p),
            k_i: a.k_i + w * (b.k_i - a.k_i),
            k_d: a.k_d + w * (b.k_d - a.k_d),
        }
    }

    /// Flattened `[k_p, k_i, k_d]` per point.
    pub fn to_vector(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.k_p, p.k_i, p.k_d]).collect()
    }

    pub fn with_vector(&self, v: &[f64]) -> Self {
        let mut out = self.clone();
        for (p, g) in out.points.iter_mut().zip(v.chunks(3)) {
            p.k_p = g[0];
            p.k_i = g[1];
            p.k_d = g[2];
        }
        out
    }
}

/// `(K_P, K_I, K_D)` at desired speed `u_d`.
pub fn schedule_gains(gs: &GainSchedule, u_d: f64) -> Gains {
    gs.at(u_d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidSettings {
    /// Bound on the accumulated error integral.
    #[serde(default = "default_integral_limit")]
    pub integral_limit: f64,
    /// Differentiate the error instead of the measurement.
    #[serde(default)]
    pub derivative_on_error: bool,
    /// Output offset seeded on activation.
    #[serde(default)]
    pub reset_bias: f64,
}

fn default_integral_limit() -> f64 {
    100.0
}

impl Default for PidSettings {
    fn default() -> Self {
        Self {
            integral_limit: default_integral_limit(),
            derivative_on_error: false,
            reset_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidState {
    /// Accumulated `sum(e * dt)`.
    pub integral: f64,
    pub prev_measurement: Option<f64>,
    pub prev_error: Option<f64>,
    /// Set while the last step skipped integration because of saturation.
    pub windup_latch: bool,
    pub bias: f64,
    pub last_output: f64,
    pub settings: PidSettings,
}

impl PidState {
    pub fn new(settings: PidSettings) -> Self {
        let mut s = Self {
            integral: 0.0,
            prev_measurement: None,
            prev_error: None,
            windup_latch: false,
            bias: 0.0,
            last_output: 0.0,
            settings,
        };
        s.activate(settings.reset_bias);
        s
    }

    /// Clears the loop memory and seeds the output with `bias` so that the
    /// first output continues from the value held before activation.
    pub fn activate(&mut self, bias: f64) {
        self.integral = 0.0;
        self.prev_measurement = None;
        self.prev_error = None;
        self.windup_latch = false;
        self.bias = bias;
        self.last_output = bias;
    }
}

/// One PID sample. `measurement_step` is the measurement change since the
/// previous sample (pass `None` to compute it by plain subtraction).
///
/// `tau = K_P e + K_I sum(e dt) + bias - K_D dy/dt`. While `saturated` is set
/// and the error has the sign of the previous output, the integral is frozen.
pub fn pid_step(
    state: &mut PidState,
    gains: &Gains,
    error: f64,
    measurement: f64,
    measurement_step: Option<f64>,
    saturated: bool,
    dt: f64,
) -> f64 {
    if gains.is_zero() {
        return state.bias;
    }
    let deepens = saturated && error * state.last_output > 0.0;
    state.windup_latch = deepens;
    if gains.k_i > 0.0 && !deepens {
        let lim = state.settings.integral_limit;
        state.integral = (state.integral + error * dt).clamp(-lim, lim);
    }
    let derivative = if state.settings.derivative_on_error {
        state.prev_error.map_or(0.0, |e0| (error - e0) / dt)
    } else {
        let dy = match (measurement_step, state.prev_measurement) {
            (Some(step), Some(_)) => step,
            (None, Some(y0)) => measurement - y0,
            (_, None) => 0.0,
        };
        -dy / dt
    };
    state.prev_measurement = Some(measurement);
    state.prev_error = Some(error);
    let out = gains.k_p * error + gains.k_i * state.integral + state.bias + gains.k_d * derivative;
    state.last_output = out;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlChannel {
    Surge,
    Heading,
    Pitch,
    Heave,
}

impl ControlChannel {
    pub const ALL: [ControlChannel; 4] = [
        ControlChannel::Surge,
        ControlChannel::Heading,
        ControlChannel::Pitch,
        ControlChannel::Heave,
    ];

    /// Wrench row driven by the channel.
    pub fn wrench_row(self) -> usize {
        match self {
            ControlChannel::Surge => 0,
            ControlChannel::Heading => 5,
            ControlChannel::Pitch => 4,
            ControlChannel::Heave => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub schedule: GainSchedule,
    #[serde(default)]
    pub pid: PidSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub surge: ChannelConfig,
    pub heading: ChannelConfig,
    pub pitch: ChannelConfig,
    pub heave: ChannelConfig,
    /// Magnitude bound on the pitch reference.
    #[serde(default = "default_max_pitch")]
    pub max_pitch_deg: f64,
    #[serde(default = "default_true")]
    pub feed_forward: bool,
}

fn default_max_pitch() -> f64 {
    30.0
}

fn default_true() -> bool {
    true
}

impl ControllerConfig {
    pub fn channel(&self, c: ControlChannel) -> &ChannelConfig {
        match c {
            ControlChannel::Surge => &self.surge,
            ControlChannel::Heading => &self.heading,
            ControlChannel::Pitch => &self.pitch,
            ControlChannel::Heave => &self.heave,
        }
    }

    pub fn channel_mut(&mut self, c: ControlChannel) -> &mut ChannelConfig {
        match c {
            ControlChannel::Surge => &mut self.surge,
            ControlChannel::Heading => &mut self.heading,
            ControlChannel::Pitch => &mut self.pitch,
            ControlChannel::Heave => &mut self.heave,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in ControlChannel::ALL {
            let ch = self.channel(c);
            ch.schedule
                .validate()
                .map_err(|e| invalid(format!("{c:?} schedule: {e}")))?;
            if !(ch.pid.integral_limit >= 0.0) {
                return Err(invalid(format!("{c:?}: integral limit must be non-negative")));
            }
        }
        if !(self.max_pitch_deg > 0.0 && self.max_pitch_deg < 90.0) {
            return Err(invalid("max_pitch_deg must lie in (0, 90)"));
        }
        Ok(())
    }
}

/// Set points of one control tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct References {
    pub psi_d: f64,
    pub theta_d: f64,
    pub z_d: f64,
    pub u_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub commands: ActuatorVector,
    /// PID wrench before feed-forward.
    pub pid_wrench: ForceMoment,
    /// Allocated wrench including feed-forward.
    pub wrench: ForceMoment,
    pub saturated: bool,
}

/// Controller state across ticks.
#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    params: ModelParams,
    bank: ActuatorBank,
    allocator: Allocator,
    states: [PidState; 4],
    saturated: bool,
}

impl Controller {
    pub fn new(config: ControllerConfig, params: ModelParams, bank: ActuatorBank) -> Result<Self> {
        config.validate()?;
        bank.validate()?;
        let allocator = Allocator::new(&bank.geometry)?;
        let states = ControlChannel::ALL.map(|c| PidState::new(config.channel(c).pid));
        Ok(Self {
            config,
            params,
            bank,
            allocator,
            states,
            saturated: false,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn state(&self, c: ControlChannel) -> &PidState {
        &self.states[c as usize]
    }

    /// Pitch reference limit in radians.
    pub fn max_pitch(&self) -> f64 {
        self.config.max_pitch_deg.to_radians()
    }

    /// Runs the four loops and converts the wrench into rpm commands.
    pub fn tick(&mut self, refs: &References, state: &VehicleState, dt: f64) -> ControlOutput {
        let (eta, nu) = (&state.eta, &state.nu);
        let u_d = refs.u_d;
        let sat = self.saturated;
        let mut pid_wrench = ForceMoment::zeros();
        for c in ControlChannel::ALL {
            let gains = self.config.channel(c).schedule.at(u_d);
            let st = &mut self.states[c as usize];
            let out = match c {
                ControlChannel::Surge => pid_step(st, &gains, u_d - nu[0], nu[0], None, sat, dt),
                ControlChannel::Heading => {
                    let psi = eta[5];
                    let step = st.prev_measurement.map(|p| wrap_angle(psi - p));
                    pid_step(st, &gains, wrap_angle(refs.psi_d - psi), psi, step, sat, dt)
                }
                ControlChannel::Pitch => pid_step(st, &gains, refs.theta_d - eta[4], eta[4], None, sat, dt),
                ControlChannel::Heave => pid_step(st, &gains, refs.z_d - eta[2], eta[2], None, sat, dt),
            };
            pid_wrench[c.wrench_row()] = out;
        }
        let mut wrench = pid_wrench;
        if self.config.feed_forward {
            wrench += restoring(&self.params, eta);
        }
        let (commands, saturated) = self.to_commands(&wrench, nu[0], nu[2]);
        self.saturated = saturated;
        ControlOutput {
            commands,
            pid_wrench,
            wrench,
            saturated,
        }
    }

    /// Allocation, inverse propeller curve and static limits.
    pub fn to_commands(&self, wrench: &ForceMoment, u_r: f64, w_r: f64) -> (ActuatorVector, bool) {
        let (forces, residual) = self.allocator.allocate_least_squares(wrench);
        let mut saturated = false;
        if residual > 1e-8 * wrench.norm().max(1.0) {
            log::debug!("wrench only attainable in the least-squares sense (residual {residual:.3e})");
        }
        let va = ActuatorBank::advance_velocities(u_r, w_r);
        // Shrink the whole force vector until every actuator can deliver its
        // share; clipping actuators one by one would distort the wrench direction.
        let mut scale: f64 = 1.0;
        for (i, id) in ActuatorId::ALL.iter().enumerate() {
            let g = self.bank.group(*id);
            let n_lim = if forces[i] > 0.0 { g.motor.n_max_pos_rpm } else { g.motor.n_max_neg_rpm };
            let ratio = thrust(&g.curve, n_lim, va[i]) / forces[i];
            if ratio > 0.0 && ratio < 1.0 {
                scale = scale.min(ratio);
            }
        }
        if scale < 1.0 {
            saturated = true;
        }
        let forces = forces.map(|f| f * scale);
        let mut commands = [0.0; ACTUATOR_COUNT];
        for (i, id) in ActuatorId::ALL.iter().enumerate() {
            let g = self.bank.group(*id);
            let limits = (g.motor.n_max_neg_rpm, g.motor.n_max_pos_rpm);
            let n = match inverse_thrust(&g.curve, forces[i], va[i], limits) {
                Ok(n) => n,
                Err(Error::InfeasibleThrust { force, .. }) => {
                    saturated = true;
                    if force > 0.0 {
                        limits.1
                    } else {
                        limits.0
                    }
                }
                Err(_) => 0.0,
            };
            let n = if n.is_finite() { n } else { 0.0 };
            let limited = static_limit(&g.motor, n);
            if limited == g.motor.n_max_pos_rpm || limited == g.motor.n_max_neg_rpm {
                saturated = true;
            }
            commands[i] = limited;
        }
        (commands, saturated)
    }
}

/// One controller sample: references and state in, rpm commands out.
pub fn control_tick(controller: &mut Controller, refs: &References, state: &VehicleState, dt: f64) -> ControlOutput {
    controller.tick(refs, state, dt)
}
