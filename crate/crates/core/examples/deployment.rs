//! Regret metrics for two design sets over simulated environments, with a
//! calibration series. Pass `--workers N` to evaluate in parallel.

use maxeig::deployment::{
    calibration_diagnostic, run_deployment, DeployConfig, MetricsReport, Provenance,
};
use maxeig::models::{Action, ContextPair, ContinuousBumpModel};
use maxeig::random::RngStream;

fn main() -> maxeig::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let workers = args
        .iter()
        .position(|a| a == "--workers")
        .and_then(|i| args.get(i + 1)?.parse().ok())
        .unwrap_or(1);
    let model = ContinuousBumpModel::default();
    let ctx = ContextPair::midpoints(10, -3.5, 3.5);
    let cfg = DeployConfig {
        n_envs: 100,
        particles: 5_000,
        n_draws: 1_000,
    };
    let rng = RngStream::new(8);
    let sets = [
        ("zeros", vec![Action::Continuous(0.0); 10]),
        (
            "spread",
            (0..10)
                .map(|i| Action::Continuous(-1.0 + 0.4 * i as f64))
                .collect(),
        ),
    ];
    let mut report = MetricsReport {
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: "example".into(),
            model_hash: "example".into(),
            seed: 8,
        },
        rows: Vec::new(),
    };
    for (name, designs) in &sets {
        let dep = run_deployment(&model, &ctx, designs, &cfg, &rng, workers)?;
        let cal = calibration_diagnostic(&dep);
        let last = cal.last().map_or(f64::NAN, |p| p.rolling_l2_error);
        println!(
            "{name}: rolling L2 error {last:.3}, {} failures",
            dep.failures()
        );
        report.rows.push(dep.summarise(name, None, 8));
    }
    print!("{}", report.to_csv()?);
    Ok(())
}
