//! Trains real-valued actions for the bump model on 20 contexts. Pass a
//! step count to run longer (default 1500).

use maxeig::mi_bound::{CriticPreset, SeparableCritic};
use maxeig::models::{ContextPair, ContinuousBumpModel, SimulatorModel};
use maxeig::random::RngStream;
use maxeig::trainer::{evaluate_bound, extract_design, train_designs, DesignSpec, TrainConfig};

fn main() -> maxeig::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1500);
    let model = ContinuousBumpModel::default();
    let ctx = ContextPair::midpoints(20, -3.5, 3.5);
    let rng = RngStream::new(0);
    let critic = SeparableCritic::new(CriticPreset::Continuous, 20, 19, &mut rng.split("critic"));
    let init = DesignSpec::init(model.action_kind(), 20, 2.0, &mut rng.split("init"));
    let cfg = TrainConfig {
        steps,
        batch: 256,
        tau_interval: (steps / 5).max(1),
        log_interval: (steps / 10).max(1),
        ..Default::default()
    };
    let (spec, critic, log) = train_designs(&model, &ctx, init, critic, &cfg, &rng)?;
    for r in &log.records {
        println!("step {:>6} bound {:.3} lr {:.2e}", r.step, r.bound, r.lr);
    }
    let designs = extract_design(&spec, model.action_kind());
    for (c, a) in ctx.experimental.iter().zip(&designs) {
        println!("context {c:+.3}: action {:+.3}", a.as_f64());
    }
    let eig = evaluate_bound(&model, &ctx, &designs, &critic, 256, 20, &rng.split("eval"))?;
    println!("held-out bound {:.3} ± {:.3}", eig.mean, eig.se);
    Ok(())
}
