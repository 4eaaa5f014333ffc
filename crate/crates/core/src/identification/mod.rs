//! Staged identification of the hydrodynamic coefficients by replaying the
//! commands of a reference log and minimizing the absolute output error.

pub mod optimizer;

use serde::{Deserialize, Serialize};

use crate::actuators::{ActuatorBank, ActuatorVector};
use crate::dynamics::{Coefficient, DofMask, ModelParams, VehicleModel};
use crate::error::{invalid, Error, Result};
use crate::simulator::{Channel, CommandSchedule, LogReplay, SimConfig, Simulator, TrajectoryLog};

pub use optimizer::{evolve, minimize, simplex_refine, OptimizerConfig};

/// Integral of the absolute output error over the selected channels,
/// `sum_c int |y_c - y_hat_c| dt`, using the trapezoidal rule on `|e|`.
/// Angle channels compare wrapped differences.
pub fn quality(reference: &TrajectoryLog, simulated: &TrajectoryLog, channels: &[Channel]) -> Result<f64> {
    check_timebase(reference, simulated)?;
    let n = reference.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut q = 0.0;
    for &ch in channels {
        let mut sum = 0.0;
        for k in 0..n {
            let e = ch
                .difference(ch.read(&reference.rows[k].state), ch.read(&simulated.rows[k].state))
                .abs();
            let dt = if k == 0 {
                reference.rows[1].t - reference.rows[0].t
            } else {
                reference.rows[k].t - reference.rows[k - 1].t
            };
            let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            sum += w * e * dt;
        }
        q += sum;
    }
    Ok(q)
}

fn check_timebase(a: &TrajectoryLog, b: &TrajectoryLog) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::TimebaseMismatch(format!("{} rows vs {} rows", a.len(), b.len())));
    }
    for (k, (ra, rb)) in a.rows.iter().zip(&b.rows).enumerate() {
        if (ra.t - rb.t).abs() > 1e-9 * ra.t.abs().max(1.0) {
            return Err(Error::TimebaseMismatch(format!("row {k}: t = {} vs {}", ra.t, rb.t)));
        }
    }
    Ok(())
}

/// The four identification campaigns, run in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Surge,
    HeaveThrusters,
    Yaw,
    PitchPropellers,
}

impl StageKind {
    pub const ORDER: [StageKind; 4] = [
        StageKind::Surge,
        StageKind::HeaveThrusters,
        StageKind::Yaw,
        StageKind::PitchPropellers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageKind::Surge => "surge",
            StageKind::HeaveThrusters => "heave_thrusters",
            StageKind::Yaw => "yaw",
            StageKind::PitchPropellers => "pitch_propellers",
        }
    }

    /// Velocity component left free during the stage.
    pub fn dof(self) -> usize {
        match self {
            StageKind::Surge => 0,
            StageKind::HeaveThrusters => 2,
            StageKind::Yaw => 5,
            StageKind::PitchPropellers => 4,
        }
    }

    pub fn mask(self) -> DofMask {
        DofMask::only(self.dof())
    }

    pub fn channels(self) -> Vec<Channel> {
        match self {
            StageKind::Surge => vec![Channel::U],
            StageKind::HeaveThrusters => vec![Channel::W, Channel::Z],
            StageKind::Yaw => vec![Channel::R, Channel::Psi],
            StageKind::PitchPropellers => vec![Channel::Q, Channel::Theta],
        }
    }

    /// Added-mass, linear and quadratic damping coefficients of the stage's axis.
    pub fn coefficients(self) -> [Coefficient; 3] {
        use Coefficient::*;
        match self {
            StageKind::Surge => [CXud, XU, CDx],
            StageKind::HeaveThrusters => [CZwd, ZW, CDz],
            StageKind::Yaw => [CNrd, NR, CDr],
            StageKind::PitchPropellers => [CMqd, MQ, CDq],
        }
    }

    /// Piecewise-constant rpm program exciting the stage's axis over a range
    /// of speeds in both directions, with its duration in seconds.
    pub fn excitation(self) -> (CommandSchedule, f64) {
        let stern = |s: f64| -> ActuatorVector { [s, s, s, s, 0.0, 0.0] };
        let vertical = |s: f64| -> ActuatorVector { [0.0, 0.0, 0.0, 0.0, s, s] };
        let yaw = |s: f64| -> ActuatorVector { [s, s, -s, -s, 0.0, 0.0] };
        let pitch = |s: f64| -> ActuatorVector { [s, -s, s, -s, 0.0, 0.0] };
        let (f, levels, hold): (&dyn Fn(f64) -> ActuatorVector, &[f64], f64) = match self {
            StageKind::Surge => (&stern, &[1500.0, 600.0, 2000.0, -1200.0, 0.0], 9.0),
            StageKind::HeaveThrusters => (&vertical, &[1800.0, -1500.0, 900.0, 0.0], 7.0),
            StageKind::Yaw => (&yaw, &[1500.0, -1000.0, 1800.0, 0.0], 8.0),
            StageKind::PitchPropellers => (&pitch, &[600.0, -500.0, 800.0, 0.0], 7.0),
        };
        let rows = levels
            .iter()
            .enumerate()
            .map(|(i, &s)| (i as f64 * hold, f(s)))
            .collect();
        let schedule = CommandSchedule { rows };
        (schedule, hold * levels.len() as f64)
    }
}

/// Search interval of one coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBound {
    pub coefficient: Coefficient,
    pub low: f64,
    pub high: f64,
}

/// One identification campaign: which axis is free, which outputs enter the
/// error, and which coefficients move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentStage {
    pub name: StageKind,
    #[serde(default)]
    pub v_const: Option<DofMask>,
    #[serde(default)]
    pub channels: Option<Vec<Channel>>,
    pub parameters: Vec<ParameterBound>,
    /// Reference log for this stage; falls back to the run's common log.
    #[serde(default)]
    pub reference_log: Option<String>,
    /// Largest acceptable final quality.
    #[serde(default)]
    pub q_ceiling: Option<f64>,
}

impl IdentStage {
    /// Stage with the default mask and channels of its kind.
    pub fn new(name: StageKind, parameters: Vec<ParameterBound>) -> Self {
        Self {
            name,
            v_const: None,
            channels: None,
            parameters,
            reference_log: None,
            q_ceiling: None,
        }
    }

    pub fn mask(&self) -> DofMask {
        self.v_const.unwrap_or_else(|| self.name.mask())
    }

    pub fn channel_list(&self) -> Vec<Channel> {
        self.channels.clone().unwrap_or_else(|| self.name.channels())
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.parameters.iter().map(|b| (b.low, b.high)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mask = self.mask();
        for ch in self.channel_list() {
            let dof = (ch as usize) % 6;
            if !mask.0[dof] {
                return Err(invalid(format!(
                    "stage {}: channel {ch:?} is frozen by the mask",
                    self.name.name()
                )));
            }
        }
        for (i, b) in self.parameters.iter().enumerate() {
            if !(b.low < b.high) || !b.low.is_finite() || !b.high.is_finite() {
                return Err(invalid(format!(
                    "stage {}: bounds of {} need low < high",
                    self.name.name(),
                    b.coefficient
                )));
            }
            if self.parameters[..i].iter().any(|o| o.coefficient == b.coefficient) {
                return Err(invalid(format!(
                    "stage {}: {} listed twice",
                    self.name.name(),
                    b.coefficient
                )));
            }
        }
        Ok(())
    }
}

/// Replays the commands of `reference` through a masked simulation.
pub fn replay(
    params: &ModelParams,
    bank: &ActuatorBank,
    reference: &TrajectoryLog,
    mask: DofMask,
) -> Result<TrajectoryLog> {
    let dt = reference
        .dt()
        .ok_or_else(|| invalid("reference log needs at least two rows"))?;
    let first = reference.rows[0];
    let mut cfg = SimConfig::new(dt, reference.duration());
    cfg.v_const = mask;
    cfg.initial_state = first.state;
    let mut sim = Simulator::new(VehicleModel::new(*params)?, *bank, &cfg)?;
    sim.settle_motors(&first.actual);
    let mut src = LogReplay::new(reference);
    let mut log = sim.run_from(first.state, reference.len(), &mut src)?;
    // keep the reference's time stamps so an offset start time still matches
    for (r, s) in log.rows.iter_mut().zip(&reference.rows) {
        r.t = s.t;
    }
    Ok(log)
}

/// Simulator-generated sea trial for one stage: the stage's excitation
/// program run with the stage mask.
pub fn synthetic_reference(kind: StageKind, params: &ModelParams, bank: &ActuatorBank, dt: f64) -> Result<TrajectoryLog> {
    let (mut schedule, duration) = kind.excitation();
    let mut cfg = SimConfig::new(dt, duration);
    cfg.v_const = kind.mask();
    crate::simulator::run(&VehicleModel::new(*params)?, bank, &cfg, &mut schedule)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientChange {
    pub coefficient: Coefficient,
    pub start: f64,
    pub identified: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: StageKind,
    pub initial_q: f64,
    pub final_q: f64,
    /// `(evaluations, best quality)` pairs.
    pub q_history: Vec<(usize, f64)>,
    /// Best coefficient vector after each generation / refinement.
    pub parameter_trajectory: Vec<Vec<f64>>,
    pub coefficients: Vec<CoefficientChange>,
}

impl StageReport {
    pub fn reduction(&self) -> f64 {
        if self.initial_q > 0.0 {
            1.0 - self.final_q / self.initial_q
        } else {
            0.0
        }
    }

    pub fn write_history_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["evaluations", "q"])?;
        for (e, q) in &self.q_history {
            w.write_record([e.to_string(), q.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores coefficient vector `x` of `stage` against `reference`; failed
/// simulations count as infinitely bad.
pub fn stage_objective(
    stage: &IdentStage,
    reference: &TrajectoryLog,
    params: &ModelParams,
    bank: &ActuatorBank,
    x: &[f64],
) -> f64 {
    let mut p = *params;
    for (b, v) in stage.parameters.iter().zip(x) {
        p.coefficients.set(b.coefficient, *v);
    }
    replay(&p, bank, reference, stage.mask())
        .and_then(|sim| quality(reference, &sim, &stage.channel_list()))
        .unwrap_or(f64::INFINITY)
}

/// Optimizes the stage's coefficient subset; all other parameters are
/// returned untouched.
pub fn run_stage(
    stage: &IdentStage,
    reference: &TrajectoryLog,
    params: &ModelParams,
    bank: &ActuatorBank,
    opt: &OptimizerConfig,
) -> Result<(ModelParams, StageReport)> {
    stage.validate()?;
    reference.validate()?;
    let start: Vec<f64> = stage
        .parameters
        .iter()
        .map(|b| params.coefficients.get(b.coefficient))
        .collect();
    for (b, v) in stage.parameters.iter().zip(&start) {
        if !(*v >= b.low && *v <= b.high) {
            return Err(invalid(format!(
                "stage {}: start value {v} of {} lies outside [{}, {}]",
                stage.name.name(),
                b.coefficient,
                b.low,
                b.high
            )));
        }
    }
    let objective = |x: &[f64]| stage_objective(stage, reference, params, bank, x);
    let search = minimize(opt, &objective, &stage.bounds(), &start)?;

    let mut out = *params;
    let mut changes = Vec::with_capacity(start.len());
    for ((b, s), v) in stage.parameters.iter().zip(&start).zip(&search.best) {
        out.coefficients.set(b.coefficient, *v);
        changes.push(CoefficientChange {
            coefficient: b.coefficient,
            start: *s,
            identified: *v,
        });
    }
    log::info!(
        "stage {}: Q {:.6e} -> {:.6e}",
        stage.name.name(),
        search.initial_q,
        search.best_q
    );
    Ok((
        out,
        StageReport {
            stage: stage.name,
            initial_q: search.initial_q,
            final_q: search.best_q,
            q_history: search.history,
            parameter_trajectory: search.trajectory,
            coefficients: changes,
        },
    ))
}

/// Runs the stages one after another, each starting from the previous
/// stage's result. Stage `i` uses seed `opt.seed + i`.
pub fn run_stages(
    stages: &[(IdentStage, &TrajectoryLog)],
    params: &ModelParams,
    bank: &ActuatorBank,
    opt: &OptimizerConfig,
) -> Result<(ModelParams, Vec<StageReport>)> {
    let mut p = *params;
    let mut reports = Vec::with_capacity(stages.len());
    for (i, (stage, reference)) in stages.iter().enumerate() {
        let cfg = OptimizerConfig {
            seed: opt.seed.wrapping_add(i as u64),
            ..*opt
        };
        let (next, report) = run_stage(stage, reference, &p, bank, &cfg)?;
        p = next;
        reports.push(report);
    }
    Ok((p, reports))
}

/// Plain-text summary of a staged run.
pub fn report_text(reports: &[StageReport]) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    for r in reports {
        let _ = writeln!(s, "[{}]", r.stage.name());
        let _ = writeln!(s, "initial_q = {}", r.initial_q);
        let _ = writeln!(s, "final_q = {}", r.final_q);
        let _ = writeln!(s, "evaluations = {}", r.q_history.last().map_or(0, |h| h.0));
        for c in &r.coefficients {
            let _ = writeln!(s, "{} = {} (start {})", c.coefficient, c.identified, c.start);
        }
        s.push('\n');
    }
    s
}
