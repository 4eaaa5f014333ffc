//! Run configuration: one JSON file drives every campaign.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actuators::ActuatorBank;
use crate::controller::ControllerConfig;
use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::guidance::WaypointPlan;
use crate::identification::{IdentStage, OptimizerConfig};
use crate::regression::FitOptions;
use crate::simulator::SimConfig;
use crate::tuning::{GainBounds, StaircaseScenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentificationConfig {
    pub stages: Vec<IdentStage>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Log shared by stages without their own.
    #[serde(default)]
    pub reference_log: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    /// CSV with header `x,y,z,u_d`.
    pub plan_csv: String,
    pub acceptance_radius_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    pub scenarios: Vec<StaircaseScenario>,
    pub bounds: GainBounds,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Measure overshoot from the lower bound, as printed in the original
    /// cost function, instead of from the upper bound.
    #[serde(default)]
    pub literal_upper: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    #[serde(default)]
    pub fit: FitOptions,
    /// Advance-speed slopes `(p2_pos, p2_neg)`; bollard tests cannot observe them.
    #[serde(default)]
    pub p2_stern: [f64; 2],
    #[serde(default)]
    pub p2_vertical: [f64; 2],
    #[serde(default)]
    pub data_dir: Option<String>,
    #[serde(default = "default_curve_points")]
    pub curve_points: usize,
}

fn default_curve_points() -> usize {
    101
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            p2_stern: [0.0; 2],
            p2_vertical: [0.0; 2],
            data_dir: None,
            curve_points: default_curve_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub actuators: ActuatorBank,
    pub simulation: SimConfig,
    /// Command table replayed by open-loop simulation (`t,n1..n6`).
    #[serde(default)]
    pub commands_csv: Option<String>,
    #[serde(default)]
    pub guidance: Option<GuidanceConfig>,
    #[serde(default)]
    pub controller: Option<ControllerConfig>,
    #[serde(default)]
    pub identification: Option<IdentificationConfig>,
    #[serde(default)]
    pub tuning: Option<TuningConfig>,
    #[serde(default)]
    pub regression: Option<RegressionConfig>,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Directory relative paths resolve against; set by [`RunConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn line_of(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map_or(1, |i| i + 1)
}

impl RunConfig {
    /// Parses and validates `text`; diagnostics carry the offending line.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        for (key, check) in cfg.checks() {
            check.map_err(|e| Error::Config {
                line: line_of(text, key),
                message: format!("{key}: {e}"),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, file: &str) -> PathBuf {
        self.base_dir.join(file)
    }

    fn exists(&self, file: &Option<String>) -> Result<()> {
        match file {
            Some(f) if !self.resolve(f).is_file() => Err(Error::InvalidParameter(format!("file {f} does not exist"))),
            _ => Ok(()),
        }
    }

    fn checks(&self) -> Vec<(&'static str, Result<()>)> {
        let mut out = vec![
            ("model", self.model.validate()),
            ("actuators", self.actuators.validate()),
            ("simulation", self.simulation.validate()),
            ("commands_csv", self.exists(&self.commands_csv)),
        ];
        if let Some(g) = &self.guidance {
            out.push(("guidance", self.exists(&Some(g.plan_csv.clone()))));
            if !(g.acceptance_radius_m > 0.0) {
                out.push(("guidance", Err(Error::InvalidParameter("acceptance radius must be positive".into()))));
            }
        }
        if let Some(c) = &self.controller {
            out.push(("controller", c.validate()));
        }
        if let Some(id) = &self.identification {
            out.push(("identification", self.exists(&id.reference_log)));
            for s in &id.stages {
                out.push(("identification", s.validate()));
                out.push(("identification", self.exists(&s.reference_log)));
            }
        }
        if let Some(t) = &self.tuning {
            for s in &t.scenarios {
                out.push(("tuning", s.validate()));
            }
            if self.controller.is_none() {
                out.push(("tuning", Err(Error::InvalidParameter("tuning needs a controller block".into()))));
            }
        }
        out
    }

    pub fn plan(&self) -> Result<Option<WaypointPlan>> {
        match &self.guidance {
            None => Ok(None),
            Some(g) => {
                let f = fs::File::open(self.resolve(&g.plan_csv))?;
                WaypointPlan::read_csv(f, g.acceptance_radius_m).map(Some)
            }
        }
    }
}
