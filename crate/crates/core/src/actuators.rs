//! Thruster models: command limiting, motor lag, propeller characteristic and
//! the geometric mapping from six scalar thrusts to the body wrench.
//!
//! The vehicle carries four inclined stern propellers (starboard/port,
//! upper/lower) and two vertical thrusters (bow/stern). Actuator order is
//! always `[SbU, SbL, PU, PL, VTB, VTS]`.

use std::collections::VecDeque;

use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dynamics::ForceMoment;
use crate::error::{invalid, Error, Result};

pub const ACTUATOR_COUNT: usize = 6;

/// Six per-actuator values in `[SbU, SbL, PU, PL, VTB, VTS]` order.
pub type ActuatorVector = [f64; ACTUATOR_COUNT];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActuatorId {
    StarboardUpper,
    StarboardLower,
    PortUpper,
    PortLower,
    VerticalBow,
    VerticalStern,
}

impl ActuatorId {
    pub const ALL: [ActuatorId; ACTUATOR_COUNT] = [
        ActuatorId::StarboardUpper,
        ActuatorId::StarboardLower,
        ActuatorId::PortUpper,
        ActuatorId::PortLower,
        ActuatorId::VerticalBow,
        ActuatorId::VerticalStern,
    ];

    pub fn is_vertical(self) -> bool {
        matches!(self, ActuatorId::VerticalBow | ActuatorId::VerticalStern)
    }
}

/// Motor controller limits and closed-loop speed response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorModel {
    pub n_max_pos_rpm: f64,
    pub n_max_neg_rpm: f64,
    pub n_min_pos_rpm: f64,
    pub n_min_neg_rpm: f64,
    pub n_acc_rpm_s: f64,
    pub n_dec_rpm_s: f64,
    pub gain: f64,
    pub lag_time_constant_s: f64,
    pub dead_time_s: f64,
}

impl MotorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_max_neg_rpm < self.n_min_neg_rpm
            && self.n_min_neg_rpm < 0.0
            && 0.0 < self.n_min_pos_rpm
            && self.n_min_pos_rpm < self.n_max_pos_rpm)
        {
            return Err(invalid(
                "motor limits must satisfy n_max_neg < n_min_neg < 0 < n_min_pos < n_max_pos",
            ));
        }
        if !(self.n_acc_rpm_s > 0.0 && self.n_dec_rpm_s > 0.0) {
            return Err(invalid("motor rate limits must be positive"));
        }
        if !(self.lag_time_constant_s > 0.0 && self.dead_time_s >= 0.0) {
            return Err(invalid("lag time constant must be positive, dead time non-negative"));
        }
        Ok(())
    }
}

/// Six-branch static characteristic of the motor controller.
///
/// Commands inside the unstable band snap outward to `n_min`, anything
/// beyond the maxima saturates, zero passes through.
pub fn static_limit(m: &MotorModel, n_d: f64) -> f64 {
    if n_d >= m.n_max_pos_rpm {
        m.n_max_pos_rpm
    } else if n_d > 0.0 && n_d < m.n_min_pos_rpm {
        m.n_min_pos_rpm
    } else if n_d == 0.0 {
        0.0
    } else if n_d < 0.0 && n_d > m.n_min_neg_rpm {
        m.n_min_neg_rpm
    } else if n_d <= m.n_max_neg_rpm {
        m.n_max_neg_rpm
    } else {
        n_d
    }
}

/// Rate available for a move from `n_prev` towards `n_cmd`: `n_acc` while the
/// magnitude grows, `n_dec` while it shrinks.
pub fn applicable_rate(m: &MotorModel, n_prev: f64, n_cmd: f64) -> f64 {
    let delta = n_cmd - n_prev;
    if n_prev == 0.0 || n_prev * delta > 0.0 {
        m.n_acc_rpm_s
    } else {
        m.n_dec_rpm_s
    }
}

pub fn rate_limit(m: &MotorModel, n_prev: f64, n_cmd: f64, dt: f64) -> f64 {
    let max_step = applicable_rate(m, n_prev, n_cmd) * dt;
    n_prev + (n_cmd - n_prev).clamp(-max_step, max_step)
}

/// First-order lag with dead time, discretized with a zero-order hold.
///
/// Each call advances the lag by one sample: the input is held over the
/// interval and the value returned is the output at its end.
#[derive(Debug, Clone)]
pub struct LagState {
    pole: f64,
    gain: f64,
    delay: VecDeque<f64>,
    output: f64,
}

impl LagState {
    pub fn new(m: &MotorModel, dt: f64) -> Self {
        let steps = (m.dead_time_s / dt).round() as usize;
        Self {
            pole: (-dt / m.lag_time_constant_s).exp(),
            gain: m.gain,
            delay: VecDeque::from(vec![0.0; steps]),
            output: 0.0,
        }
    }

    /// Puts the lag in steady state at `output`.
    pub fn settle_at(&mut self, output: f64) {
        let input = if self.gain != 0.0 { output / self.gain } else { 0.0 };
        self.delay.iter_mut().for_each(|v| *v = input);
        self.output = output;
    }

    pub fn output(&self) -> f64 {
        self.output
    }

    pub fn delay_steps(&self) -> usize {
        self.delay.len()
    }

    pub fn step(&mut self, n_in: f64) -> f64 {
        let delayed = if self.delay.is_empty() {
            n_in
        } else {
            self.delay.push_back(n_in);
            self.delay.pop_front().unwrap_or(n_in)
        };
        self.output = self.pole * self.output + (1.0 - self.pole) * self.gain * delayed;
        self.output
    }
}

/// Propeller characteristic `F = p1 |n| n + p2 |n| V_a` with separate
/// coefficient pairs for each direction of rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropellerCurve {
    pub p1_pos: f64,
    pub p1_neg: f64,
    #[serde(default)]
    pub p2_pos: f64,
    #[serde(default)]
    pub p2_neg: f64,
    #[serde(default)]
    pub diameter_m: f64,
}

impl PropellerCurve {
    /// Builds the curve from nondimensional coefficients, `p1 = a1 rho d^4`, `p2 = a2 rho d^3`.
    pub fn from_hydrodynamic(
        alpha1: (f64, f64),
        alpha2: (f64, f64),
        fluid_density: f64,
        diameter_m: f64,
    ) -> Self {
        let d3 = diameter_m.powi(3);
        let d4 = d3 * diameter_m;
        Self {
            p1_pos: alpha1.0 * fluid_density * d4,
            p1_neg: alpha1.1 * fluid_density * d4,
            p2_pos: alpha2.0 * fluid_density * d3,
            p2_neg: alpha2.1 * fluid_density * d3,
            diameter_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p1_pos > 0.0 && self.p1_neg > 0.0) {
            return Err(invalid("propeller p1 coefficients must be positive"));
        }
        Ok(())
    }
}

pub fn thrust(c: &PropellerCurve, n_a: f64, v_a: f64) -> f64 {
    let (p1, p2) = if n_a >= 0.0 {
        (c.p1_pos, c.p2_pos)
    } else {
        (c.p1_neg, c.p2_neg)
    };
    p1 * n_a.abs() * n_a + p2 * n_a.abs() * v_a
}

/// Revolution speed producing `force` at advance velocity `v_a`.
///
/// Positive forces use the forward-rotation root, negative forces the reverse
/// one. `n_max` is `(n_max_neg, n_max_pos)`; forces beyond what the curve
/// yields there are rejected.
pub fn inverse_thrust(c: &PropellerCurve, force: f64, v_a: f64, n_max: (f64, f64)) -> Result<f64> {
    if force == 0.0 {
        return Ok(0.0);
    }
    if force > 0.0 {
        let limit = thrust(c, n_max.1, v_a);
        if force > limit {
            return Err(Error::InfeasibleThrust { force, limit });
        }
        // p1 n^2 + p2 V_a n - F = 0, n > 0
        let b = c.p2_pos * v_a;
        let n = (-b + (b * b + 4.0 * c.p1_pos * force).sqrt()) / (2.0 * c.p1_pos);
        Ok(n)
    } else {
        let limit = thrust(c, n_max.0, v_a);
        if force < limit {
            return Err(Error::InfeasibleThrust { force, limit });
        }
        // with n = -k: p1 k^2 - p2 V_a k + F = 0, k > 0
        let b = c.p2_neg * v_a;
        let k = (b + (b * b - 4.0 * c.p1_neg * force).sqrt()) / (2.0 * c.p1_neg);
        Ok(-k)
    }
}

/// Mounting of the six actuators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorGeometry {
    pub alpha_p_rad: f64,
    pub beta_p_rad: f64,
    pub r_sbu_m: Vector3<f64>,
    pub r_sbl_m: Vector3<f64>,
    pub r_pu_m: Vector3<f64>,
    pub r_pl_m: Vector3<f64>,
    pub r_vtb_m: Vector3<f64>,
    pub r_vts_m: Vector3<f64>,
}

impl ActuatorGeometry {
    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64| (0.0..std::f64::consts::FRAC_PI_2).contains(&a);
        if !(ok(self.alpha_p_rad) && ok(self.beta_p_rad)) {
            return Err(invalid("propeller inclination angles must lie in [0, pi/2)"));
        }
        Ok(())
    }

    pub fn lever_arms(&self) -> [Vector3<f64>; ACTUATOR_COUNT] {
        [
            self.r_sbu_m,
            self.r_sbl_m,
            self.r_pu_m,
            self.r_pl_m,
            self.r_vtb_m,
            self.r_vts_m,
        ]
    }
}

/// Unit thrust directions of the six actuators in the body frame.
pub fn force_directions(g: &ActuatorGeometry) -> [Vector3<f64>; ACTUATOR_COUNT] {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let sb = (half_pi - g.beta_p_rad).sin();
    let cb = (half_pi - g.beta_p_rad).cos();
    let sa = (half_pi - g.alpha_p_rad).sin();
    let ca = (half_pi - g.alpha_p_rad).cos();
    let x = sb * sa;
    let y = sb * ca;
    [
        Vector3::new(x, y, -cb),
        Vector3::new(x, y, cb),
        Vector3::new(x, -y, -cb),
        Vector3::new(x, -y, cb),
        Vector3::z(),
        Vector3::z(),
    ]
}

/// Constant matrix `B` with `tau = B * [F_SbU, ..., F_VTS]`.
pub fn actuator_matrix(g: &ActuatorGeometry) -> Matrix6<f64> {
    let dirs = force_directions(g);
    let arms = g.lever_arms();
    let mut b = Matrix6::zeros();
    for (i, (f, r)) in dirs.iter().zip(arms.iter()).enumerate() {
        let m = r.cross(f);
        b.set_column(i, &Vector6::new(f.x, f.y, f.z, m.x, m.y, m.z));
    }
    b
}

pub fn assemble_tau(g: &ActuatorGeometry, forces: &ActuatorVector) -> ForceMoment {
    actuator_matrix(g) * Vector6::from_row_slice(forces)
}

/// Minimum-norm allocation through the pseudo-inverse of `B`.
#[derive(Debug, Clone)]
pub struct Allocator {
    matrix: Matrix6<f64>,
    pinv: Matrix6<f64>,
    rank: usize,
    tolerance: f64,
}

/// Singular values below this fraction of the largest are treated as zero.
const RANK_CUTOFF: f64 = 1e-10;

impl Allocator {
    pub fn new(g: &ActuatorGeometry) -> Result<Self> {
        g.validate()?;
        let matrix = actuator_matrix(g);
        let svd = matrix.svd(true, true);
        let smax = svd.singular_values.max();
        if !(smax > 0.0) {
            return Err(invalid("actuator matrix is zero"));
        }
        let eps = smax * RANK_CUTOFF;
        let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
        let pinv = svd
            .pseudo_inverse(eps)
            .map_err(|e| invalid(format!("pseudo-inverse failed: {e}")))?;
        Ok(Self {
            matrix,
            pinv,
            rank,
            tolerance: 1e-8,
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Least-squares forces and the residual norm `|B f - tau|`.
    pub fn allocate_least_squares(&self, tau: &ForceMoment) -> (ActuatorVector, f64) {
        let f = self.pinv * tau;
        let residual = (self.matrix * f - tau).norm();
        (f.into(), residual)
    }

    /// Exact allocation; fails when `tau` has a component outside the span of `B`.
    pub fn allocate(&self, tau: &ForceMoment) -> Result<ActuatorVector> {
        let (f, residual) = self.allocate_least_squares(tau);
        if residual > self.tolerance * tau.norm().max(1.0) {
            return Err(Error::UnattainableWrench { residual });
        }
        Ok(f)
    }
}

/// Motor and propeller shared by one actuator group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorGroup {
    pub motor: MotorModel,
    pub curve: PropellerCurve,
}

/// Configuration of all six actuators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorBank {
    pub stern: ActuatorGroup,
    pub vertical: ActuatorGroup,
    pub geometry: ActuatorGeometry,
}

impl ActuatorBank {
    pub fn validate(&self) -> Result<()> {
        self.stern.motor.validate()?;
        self.vertical.motor.validate()?;
        self.stern.curve.validate()?;
        self.vertical.curve.validate()?;
        self.geometry.validate()
    }

    pub fn group(&self, id: ActuatorId) -> &ActuatorGroup {
        if id.is_vertical() {
            &self.vertical
        } else {
            &self.stern
        }
    }

    /// Advance velocity seen by each actuator: `u_r` for stern propellers, `w_r` for thrusters.
    pub fn advance_velocities(u_r: f64, w_r: f64) -> ActuatorVector {
        [u_r, u_r, u_r, u_r, w_r, w_r]
    }

    pub fn thrusts(&self, n_a: &ActuatorVector, u_r: f64, w_r: f64) -> ActuatorVector {
        let va = Self::advance_velocities(u_r, w_r);
        let mut f = [0.0; ACTUATOR_COUNT];
        for (i, id) in ActuatorId::ALL.iter().enumerate() {
            f[i] = thrust(&self.group(*id).curve, n_a[i], va[i]);
        }
        f
    }

    pub fn tau(&self, n_a: &ActuatorVector, u_r: f64, w_r: f64) -> ForceMoment {
        assemble_tau(&self.geometry, &self.thrusts(n_a, u_r, w_r))
    }
}

/// Command chain of one actuator: static limit, rate limit, lag.
#[derive(Debug, Clone)]
pub struct MotorChain {
    motor: MotorModel,
    dt: f64,
    rate_limited: f64,
    lag: LagState,
}

impl MotorChain {
    pub fn new(motor: MotorModel, dt: f64) -> Self {
        Self {
            lag: LagState::new(&motor, dt),
            motor,
            dt,
            rate_limited: 0.0,
        }
    }

    /// Actual revolution speed at the current sample.
    pub fn actual(&self) -> f64 {
        self.lag.output()
    }

    pub fn settle_at(&mut self, n_a: f64) {
        self.lag.settle_at(n_a);
        self.rate_limited = if self.motor.gain != 0.0 {
            n_a / self.motor.gain
        } else {
            0.0
        };
    }

    /// Feeds one commanded sample through the chain and returns the next actual speed.
    pub fn advance(&mut self, n_d: f64) -> f64 {
        let limited = static_limit(&self.motor, n_d);
        self.rate_limited = rate_limit(&self.motor, self.rate_limited, limited, self.dt);
        self.lag.step(self.rate_limited)
    }
}

/// Mutable command-chain state of all six actuators.
#[derive(Debug, Clone)]
pub struct ActuatorChains {
    chains: [MotorChain; ACTUATOR_COUNT],
}

impl ActuatorChains {
    pub fn new(bank: &ActuatorBank, dt: f64) -> Self {
        Self {
            chains: ActuatorId::ALL.map(|id| MotorChain::new(bank.group(id).motor, dt)),
        }
    }

    pub fn actual(&self) -> ActuatorVector {
        std::array::from_fn(|i| self.chains[i].actual())
    }

    pub fn settle_at(&mut self, n_a: &ActuatorVector) {
        for (c, n) in self.chains.iter_mut().zip(n_a) {
            c.settle_at(*n);
        }
    }

    pub fn advance(&mut self, commands: &ActuatorVector) -> ActuatorVector {
        std::array::from_fn(|i| self.chains[i].advance(commands[i]))
    }
}
