//! The whole workflow on a shipped preset, shrunk to run in seconds:
//! training, baselines, bound estimates, deployment and a merged report.
//! Outputs land in a temporary directory whose path is printed.

use std::path::Path;

use maxeig::cli::{cmd_pipeline, RunOptions};
use maxeig::config::ScaleChoice;

fn main() -> maxeig::Result<()> {
    let preset = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets/discrete10.json");
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(preset).unwrap())?;
    cfg["desk"] = serde_json::json!({"steps": 300, "batch": 128, "tau_interval": 60, "eig_steps": 200, "n_envs": 40});
    cfg["particles"] = 2000.into();

    let out = std::env::temp_dir().join("maxeig-pipeline-example");
    std::fs::create_dir_all(&out).unwrap();
    let config = out.join("config.json");
    std::fs::write(&config, serde_json::to_string_pretty(&cfg)?).unwrap();
    let opts = RunOptions {
        config,
        seed: None,
        out: out.clone(),
        workers: 1,
        scale: ScaleChoice::Desk,
    };
    for p in cmd_pipeline(&opts)? {
        println!("wrote {}", p.display());
    }
    print!(
        "{}",
        std::fs::read_to_string(out.join("report.csv")).unwrap()
    );
    Ok(())
}
