//! Importance-sampled posterior for the bump model after a handful of
//! noisy observations.

use maxeig::deployment::{posterior_estimates, simulate_dataset, snis_posterior};
use maxeig::models::{Action, ContextPair, ContinuousBumpModel, SimulatorModel};
use maxeig::random::RngStream;

fn main() -> maxeig::Result<()> {
    let model = ContinuousBumpModel::default();
    let ctx = ContextPair::midpoints(12, -3.5, 3.5);
    let mut rng = RngStream::new(4);
    let truth = model.sample_prior(&mut rng, 1).row(0).to_vec();
    let designs: Vec<Action> = ctx
        .experimental
        .iter()
        .map(|_| Action::Continuous(1.5))
        .collect();
    let data = simulate_dataset(&model, &truth, &ctx.experimental, &designs, &mut rng)?;

    let post = snis_posterior(&model, &data, 10_000, &mut rng)?;
    let (mean, std) = post.moments();
    println!("truth          {truth:.3?}");
    println!("posterior mean {mean:.3?}");
    println!("posterior std  {std:.3?}");
    println!("ESS {:.1} of 10000", post.ess);

    let est = posterior_estimates(&model, &post, &ctx.evaluation, 2000, &mut rng)?;
    for (i, c) in ctx.evaluation.iter().enumerate().step_by(3) {
        println!(
            "c* {c:+.2}: m* est {:.3} true {:.3}, action est {:+.3} true {:+.3}",
            est.max_values[i],
            model.max_value(&truth, *c),
            est.actions[i].as_f64(),
            model.argmax_action(&truth, *c).as_f64()
        );
    }
    Ok(())
}
