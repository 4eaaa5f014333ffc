//! Closed-loop runs: guidance or a set-point program feeding the controller,
//! whose commands drive the simulator.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use crate::actuators::{ActuatorBank, ActuatorVector};
use crate::controller::{Controller, ControllerConfig, References};
use crate::dynamics::{ModelParams, VehicleModel};
use crate::error::Result;
use crate::guidance::{Guidance, WaypointPlan};
use crate::kinematics::VehicleState;
use crate::simulator::{CommandSource, SimConfig, Simulator, TrajectoryLog};

/// Pitch set point for the controller from the line-of-sight angle.
///
/// The line-of-sight angle is positive towards deeper waypoints (z down)
/// while a positive pitch raises the nose, hence the sign flip. Angles of
/// waypoints behind the vehicle are folded into the forward half-plane and
/// the result is limited to `max_pitch`.
pub fn pitch_reference(theta_d: f64, max_pitch: f64) -> f64 {
    let folded = if theta_d > FRAC_PI_2 {
        std::f64::consts::PI - theta_d
    } else if theta_d < -FRAC_PI_2 {
        -std::f64::consts::PI - theta_d
    } else {
        theta_d
    };
    -folded.clamp(-max_pitch, max_pitch)
}

/// Guidance state recorded at each control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissionRecord {
    pub t: f64,
    pub index: usize,
    pub theta_d: f64,
    pub psi_d: f64,
    pub theta_ref: f64,
    pub z_d: f64,
    pub u_d: f64,
    pub cross_track: f64,
    pub complete: bool,
    pub saturated: bool,
}

pub fn write_mission_csv<W: Write>(records: &[MissionRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t", "index", "theta_d", "psi_d", "theta_ref", "z_d", "u_d", "xte", "complete", "saturated",
    ])?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.index.to_string(),
            r.theta_d.to_string(),
            r.psi_d.to_string(),
            r.theta_ref.to_string(),
            r.z_d.to_string(),
            r.u_d.to_string(),
            r.cross_track.to_string(),
            u8::from(r.complete).to_string(),
            u8::from(r.saturated).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Waypoint following: guidance, then the controller.
pub struct Mission {
    guidance: Guidance,
    controller: Controller,
    dt: f64,
    pub records: Vec<MissionRecord>,
}

impl Mission {
    pub fn new(guidance: Guidance, controller: Controller, dt: f64) -> Self {
        Self {
            guidance,
            controller,
            dt,
            records: Vec::new(),
        }
    }

    pub fn guidance(&self) -> &Guidance {
        &self.guidance
    }
}

impl CommandSource for Mission {
    fn command(&mut self, _step: usize, t: f64, state: &VehicleState) -> Result<ActuatorVector> {
        let out = self.guidance.advance(&state.position());
        let theta_ref = pitch_reference(out.theta_d, self.controller.max_pitch());
        let z_d = self.guidance.plan().waypoints[out.index].z;
        let refs = References {
            psi_d: out.psi_d,
            theta_d: theta_ref,
            z_d,
            u_d: out.u_d,
        };
        let ctl = self.controller.tick(&refs, state, self.dt);
        self.records.push(MissionRecord {
            t,
            index: out.index,
            theta_d: out.theta_d,
            psi_d: out.psi_d,
            theta_ref,
            z_d,
            u_d: out.u_d,
            cross_track: out.cross_track,
            complete: out.complete,
            saturated: ctl.saturated,
        });
        Ok(ctl.commands)
    }
}

/// Flies `plan` from the configured initial state.
pub fn run_mission(
    params: &ModelParams,
    bank: &ActuatorBank,
    sim: &SimConfig,
    plan: &WaypointPlan,
    controller: &ControllerConfig,
) -> Result<(TrajectoryLog, Vec<MissionRecord>)> {
    let init = sim.initial_state;
    let guidance = Guidance::new(plan.clone(), init.position(), init.eta[5], init.eta[4])?;
    let ctl = Controller::new(controller.clone(), *params, *bank)?;
    let mut mission = Mission::new(guidance, ctl, sim.dt_s);
    let mut simulator = Simulator::new(VehicleModel::new(*params)?, *bank, sim)?;
    let log = simulator.run_from(init, sim.sample_count(), &mut mission)?;
    Ok((log, mission.records))
}

/// Controller driven by a time-dependent set-point program.
pub struct SetpointRun<F: FnMut(f64) -> References> {
    controller: Controller,
    program: F,
    dt: f64,
}

impl<F: FnMut(f64) -> References> SetpointRun<F> {
    pub fn new(controller: Controller, program: F, dt: f64) -> Self {
        Self { controller, program, dt }
    }
}

impl<F: FnMut(f64) -> References> CommandSource for SetpointRun<F> {
    fn command(&mut self, _step: usize, t: f64, state: &VehicleState) -> Result<ActuatorVector> {
        let refs = (self.program)(t);
        Ok(self.controller.tick(&refs, state, self.dt).commands)
    }
}

/// Closed-loop response to a set-point program.
pub fn run_setpoints<F: FnMut(f64) -> References>(
    params: &ModelParams,
    bank: &ActuatorBank,
    sim: &SimConfig,
    controller: &ControllerConfig,
    program: F,
) -> Result<TrajectoryLog> {
    let ctl = Controller::new(controller.clone(), *params, *bank)?;
    let mut run = SetpointRun::new(ctl, program, sim.dt_s);
    let mut simulator = Simulator::new(VehicleModel::new(*params)?, *bank, sim)?;
    simulator.run_from(sim.initial_state, sim.sample_count(), &mut run)
}
