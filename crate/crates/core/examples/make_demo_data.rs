//! Writes the data files the sample configs refer to: synthetic reference
//! logs for identification, bollard-pull datasets and an open-loop command table.
//!
//! Usage: `cargo run --release -p auvpilot-core --example make_demo_data -- configs`

use std::fs::{self, File};
use std::path::PathBuf;

use auvpilot::actuators::{force_directions, thrust, ActuatorBank};
use auvpilot::dynamics::ModelParams;
use auvpilot::identification::{synthetic_reference, StageKind};
use auvpilot::regression::{SurgeDataset, TestDirection, ThrusterGroup};
use auvpilot::simulator::CommandSchedule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> auvpilot::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs".into()));
    // raw parse: the files referenced by the config do not exist yet
    let raw: serde_json::Value = serde_json::from_reader(File::open(dir.join("demo.json"))?)?;
    let params: ModelParams = serde_json::from_value(raw["model"].clone())?;
    let bank: ActuatorBank = serde_json::from_value(raw["actuators"].clone())?;

    fs::create_dir_all(dir.join("refs"))?;
    for kind in StageKind::ORDER {
        synthetic_reference(kind, &params, &bank, 0.05)?.save(&dir.join(format!("refs/{}.csv", kind.name())))?;
    }

    fs::create_dir_all(dir.join("surge_tests"))?;
    let dirs = force_directions(&bank.geometry);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for d in TestDirection::ALL {
        let (curve, cosine) = match d.group() {
            ThrusterGroup::Stern => (bank.stern.curve, dirs[0].x),
            ThrusterGroup::Vertical => (bank.vertical.curve, dirs[4].z),
        };
        let sign = if d.positive_rpm() { 1.0 } else { -1.0 };
        let samples = (1..=20)
            .map(|k| {
                let n = sign * 100.0 * k as f64;
                let f = d.group().size() as f64 * cosine * thrust(&curve, n, 0.0);
                let noise = Normal::new(0.0, 0.01 * f.abs()).expect("finite");
                (n, f + noise.sample(&mut rng))
            })
            .collect();
        SurgeDataset::new(d, samples)?.write_csv(File::create(dir.join(format!("surge_tests/{}.csv", d.file_stem())))?)?;
    }

    let commands = CommandSchedule::new(vec![
        (0.0, [1200.0, 1200.0, 1200.0, 1200.0, 0.0, 0.0]),
        (20.0, [1500.0, 1500.0, 900.0, 900.0, 400.0, 400.0]),
        (40.0, [0.0; 6]),
    ])?;
    commands.write_csv(File::create(dir.join("commands.csv"))?)?;
    Ok(())
}
