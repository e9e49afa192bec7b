//! Trains a batch of 10 treatment assignments for the four-treatment
//! quadratic model. Pass a step count to run longer (default 1500).

use maxeig::mi_bound::{CriticPreset, SeparableCritic};
use maxeig::models::{ContextPair, DiscreteQuadraticModel, SimulatorModel};
use maxeig::random::RngStream;
use maxeig::trainer::{extract_design, train_designs, DesignSpec, TrainConfig};

fn main() -> maxeig::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1500);
    let model = DiscreteQuadraticModel::default();
    let ctx = ContextPair::mirrored(10, -3.0, -1.0);
    let rng = RngStream::new(0);
    let critic = SeparableCritic::new(CriticPreset::Discrete, 10, 10, &mut rng.split("critic"));
    let init = DesignSpec::init(model.action_kind(), 10, 2.0, &mut rng.split("init"));
    let cfg = TrainConfig {
        steps,
        batch: 256,
        tau_interval: (steps / 5).max(1),
        log_interval: (steps / 10).max(1),
        ..Default::default()
    };
    let (spec, _, log) = train_designs(&model, &ctx, init, critic, &cfg, &rng)?;
    for r in &log.records {
        println!("step {:>6} bound {:.3} tau {:.3}", r.step, r.bound, r.tau);
    }
    for (c, a) in ctx
        .experimental
        .iter()
        .zip(extract_design(&spec, model.action_kind()))
    {
        println!("context {c:+.3}: treatment {}", a.as_f64() as usize + 1);
    }
    Ok(())
}
