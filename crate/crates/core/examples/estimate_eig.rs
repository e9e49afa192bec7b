//! Bound estimates for fixed designs, each with its own freshly trained
//! critic.

use maxeig::baselines::{baseline_designs, eig_of_fixed_designs, BaselineSpec, EigConfig};
use maxeig::mi_bound::CriticPreset;
use maxeig::models::{ContextPair, DiscreteQuadraticModel};
use maxeig::random::RngStream;
use maxeig::trainer::TrainConfig;

fn main() -> maxeig::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1000);
    let model = DiscreteQuadraticModel::default();
    let ctx = ContextPair::mirrored(10, -3.0, -1.0);
    let cfg = EigConfig {
        train: TrainConfig {
            steps,
            batch: 256,
            tau_interval: steps.max(1),
            ..Default::default()
        },
        eval_batches: 20,
    };
    for method in ["random", "ucb:1"] {
        let spec = BaselineSpec::parse(method)?;
        let designs = baseline_designs(&model, &ctx.experimental, &spec, &mut RngStream::new(1))?;
        let (eig, _, _) = eig_of_fixed_designs(
            &model,
            &ctx,
            &designs,
            CriticPreset::Discrete,
            &cfg,
            &RngStream::new(2),
        )?;
        println!(
            "{method:>7}: {:.3} ± {:.3} (log B = {:.3})",
            eig.mean,
            eig.se,
            256f64.ln()
        );
    }
    Ok(())
}
