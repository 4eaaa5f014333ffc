use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auvpilot::autopilot::{run_mission, write_mission_csv};
use auvpilot::config::RunConfig;
use auvpilot::dynamics::VehicleModel;
use auvpilot::identification::{report_text, run_stages, IdentStage};
use auvpilot::regression::{self, curve_from_fits, SurgeDataset, TestDirection};
use auvpilot::simulator::{self, CommandSchedule, TrajectoryLog};
use auvpilot::tuning::tune;
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

#[derive(Parser)]
#[command(name = "auvpilot", version, about = "Simulation, identification and autopilot tuning campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` of the config, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Open,
    Closed,
}

#[derive(Subcommand)]
enum Command {
    /// Open-loop command replay or closed-loop waypoint mission.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "open")]
        mode: Mode,
    },
    /// Fit propeller curves to the four bollard-pull datasets.
    Regress {
        #[command(flatten)]
        common: Common,
        /// Directory holding stern_forward.csv, stern_backward.csv, vertical_down.csv, vertical_up.csv.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Staged identification of the hydrodynamic coefficients.
    Identify {
        #[command(flatten)]
        common: Common,
        /// Reference trajectory log shared by stages without their own.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Tune gain schedules on the configured staircase scenarios.
    Tune {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    seed: u64,
}

impl Context {
    fn load(common: &Common) -> Result<Self, Failure> {
        let cfg = RunConfig::load(&common.config).map_err(|e| config_err(format!("{}: {e}", common.config.display())))?;
        let out = common
            .out
            .clone()
            .or_else(|| cfg.output_dir.as_ref().map(|d| cfg.resolve(d)))
            .unwrap_or_else(|| PathBuf::from("out"));
        let seed = common.seed.unwrap_or(cfg.seed);
        Ok(Self { cfg, out, seed })
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        fs::create_dir_all(&self.out).map_err(runtime_err)?;
        let path = self.out.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| runtime_err(format!("{}: {e}", path.display())))
    }

    fn write(&self, name: &str, text: &str) -> Outcome {
        fs::create_dir_all(&self.out).map_err(runtime_err)?;
        fs::write(self.out.join(name), text).map_err(runtime_err)
    }
}

fn open_input(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn simulate(common: &Common, mode: Mode) -> Outcome {
    let ctx = Context::load(common)?;
    let cfg = &ctx.cfg;
    match mode {
        Mode::Open => {
            let file = cfg
                .commands_csv
                .as_ref()
                .ok_or_else(|| config_err("open-loop simulation needs `commands_csv`"))?;
            let mut schedule = CommandSchedule::read_csv(open_input(&cfg.resolve(file))?).map_err(config_err)?;
            let model = VehicleModel::new(cfg.model).map_err(config_err)?;
            let log = simulator::run(&model, &cfg.actuators, &cfg.simulation, &mut schedule).map_err(runtime_err)?;
            log.write_csv(ctx.create("trajectory.csv")?).map_err(runtime_err)?;
            info!("wrote {} samples", log.len());
        }
        Mode::Closed => {
            let plan = cfg
                .plan()
                .map_err(config_err)?
                .ok_or_else(|| config_err("closed-loop simulation needs a `guidance` block"))?;
            let controller = cfg
                .controller
                .as_ref()
                .ok_or_else(|| config_err("closed-loop simulation needs a `controller` block"))?;
            let (log, records) =
                run_mission(&cfg.model, &cfg.actuators, &cfg.simulation, &plan, controller).map_err(runtime_err)?;
            log.write_csv(ctx.create("trajectory.csv")?).map_err(runtime_err)?;
            write_mission_csv(&records, ctx.create("guidance.csv")?).map_err(runtime_err)?;
            match records.iter().find(|r| r.complete) {
                Some(r) => info!("mission complete at t = {} s", r.t),
                None => info!("mission not complete within the horizon"),
            }
        }
    }
    Ok(())
}

fn regress(common: &Common, data: Option<&Path>) -> Outcome {
    let ctx = Context::load(common)?;
    let cfg = &ctx.cfg;
    let rc = cfg.regression.clone().unwrap_or_default();
    let dir = data
        .map(Path::to_path_buf)
        .or_else(|| rc.data_dir.as_ref().map(|d| cfg.resolve(d)))
        .ok_or_else(|| config_err("no data directory given (--data or regression.data_dir)"))?;
    let mut datasets = Vec::new();
    for d in TestDirection::ALL {
        let path = dir.join(format!("{}.csv", d.file_stem()));
        let raw = SurgeDataset::read_csv(d, open_input(&path)?)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        datasets.push(raw);
    }
    let mut results = Vec::new();
    for raw in &datasets {
        let per = raw.per_actuator(&cfg.actuators.geometry).map_err(runtime_err)?;
        results.push(regression::fit(&per, &rc.fit).map_err(runtime_err)?);
    }
    let text = regression::report(&results);
    print!("{text}");
    ctx.write("regression.txt", &text)?;
    for (raw, r) in datasets.iter().zip(&results) {
        let (lo, hi) = raw
            .samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.0), hi.max(s.0)));
        let w = ctx.create(&format!("{}_fit.csv", r.direction.file_stem()))?;
        regression::write_curve_samples(r, (lo, hi), rc.curve_points, w).map_err(runtime_err)?;
    }
    let stern = curve_from_fits(
        &results[0],
        &results[1],
        (rc.p2_stern[0], rc.p2_stern[1]),
        cfg.actuators.stern.curve.diameter_m,
    );
    let vertical = curve_from_fits(
        &results[2],
        &results[3],
        (rc.p2_vertical[0], rc.p2_vertical[1]),
        cfg.actuators.vertical.curve.diameter_m,
    );
    let curves = serde_json::json!({ "stern": stern, "vertical": vertical });
    ctx.write("curves.json", &(serde_json::to_string_pretty(&curves).map_err(runtime_err)? + "\n"))
}

fn identify(common: &Common, reference: Option<&Path>) -> Outcome {
    let ctx = Context::load(common)?;
    let cfg = &ctx.cfg;
    let id = cfg
        .identification
        .as_ref()
        .ok_or_else(|| config_err("config has no `identification` block"))?;
    let shared = reference
        .map(Path::to_path_buf)
        .or_else(|| id.reference_log.as_ref().map(|f| cfg.resolve(f)));
    let load = |p: &Path| -> Result<TrajectoryLog, Failure> {
        TrajectoryLog::load(p).map_err(|e| config_err(format!("{}: {e}", p.display())))
    };
    let shared_log = shared.as_deref().map(load).transpose()?;
    let mut logs = Vec::new();
    for s in &id.stages {
        let log = match &s.reference_log {
            Some(f) => load(&cfg.resolve(f))?,
            None => shared_log
                .clone()
                .ok_or_else(|| config_err(format!("stage {} has no reference log", s.name.name())))?,
        };
        logs.push(log);
    }
    let pairs: Vec<(IdentStage, &TrajectoryLog)> = id.stages.iter().cloned().zip(logs.iter()).collect();
    let mut opt = id.optimizer;
    opt.seed = ctx.seed;
    let (params, reports) = run_stages(&pairs, &cfg.model, &cfg.actuators, &opt).map_err(runtime_err)?;
    let text = report_text(&reports);
    print!("{text}");
    ctx.write("identification.txt", &text)?;
    for r in &reports {
        r.write_history_csv(ctx.create(&format!("q_{}.csv", r.stage.name()))?)
            .map_err(runtime_err)?;
    }
    ctx.write("model.json", &(serde_json::to_string_pretty(&params).map_err(runtime_err)? + "\n"))?;
    for (s, r) in id.stages.iter().zip(&reports) {
        if let Some(ceiling) = s.q_ceiling {
            if r.final_q.is_nan() || r.final_q > ceiling {
                return Err(runtime_err(format!(
                    "stage {} ended at Q = {} above its ceiling {ceiling}",
                    s.name.name(),
                    r.final_q
                )));
            }
        }
    }
    Ok(())
}

fn tune_cmd(common: &Common) -> Outcome {
    let ctx = Context::load(common)?;
    let cfg = &ctx.cfg;
    let tc = cfg.tuning.as_ref().ok_or_else(|| config_err("config has no `tuning` block"))?;
    let mut controller = cfg
        .controller
        .clone()
        .ok_or_else(|| config_err("config has no `controller` block"))?;
    let mut text = String::new();
    for (i, scenario) in tc.scenarios.iter().enumerate() {
        let mut opt = tc.optimizer;
        opt.seed = ctx.seed.wrapping_add(i as u64);
        let (tuned, report) = tune(
            scenario,
            &controller,
            &tc.bounds,
            &cfg.model,
            &cfg.actuators,
            &opt,
            tc.literal_upper,
        )
        .map_err(runtime_err)?;
        if !report.final_q.is_finite() {
            return Err(runtime_err(format!("tuning of {:?} produced no finite Q", scenario.channel)));
        }
        let name = serde_json::to_value(scenario.channel)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        report.trajectory.write_csv(ctx.create(&format!("tune_{name}_trajectory.csv"))?).map_err(runtime_err)?;
        let mut w = ctx.create(&format!("tune_{name}_q.csv"))?;
        {
            use std::io::Write;
            writeln!(w, "evaluations,q").map_err(runtime_err)?;
            for (e, q) in &report.q_history {
                writeln!(w, "{e},{q}").map_err(runtime_err)?;
            }
        }
        text.push_str(&report.text());
        controller = tuned;
    }
    print!("{text}");
    ctx.write("tuning.txt", &text)?;
    ctx.write(
        "controller.json",
        &(serde_json::to_string_pretty(&controller).map_err(runtime_err)? + "\n"),
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common, mode } => simulate(common, *mode),
        Command::Regress { common, data } => regress(common, data.as_deref()),
        Command::Identify { common, reference } => identify(common, reference.as_deref()),
        Command::Tune { common } => tune_cmd(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
