//! Random and UCB designs, with the UCB scores behind the choice.

use maxeig::baselines::{baseline_designs, ucb_scores, BaselineSpec};
use maxeig::models::{linspace, ContinuousBumpModel, DiscreteQuadraticModel, SimulatorModel};
use maxeig::random::RngStream;

fn main() -> maxeig::Result<()> {
    let discrete = DiscreteQuadraticModel::default();
    let prior = discrete.sample_prior(&mut RngStream::new(1), 100_000);
    for lambda in [0.0, 1.0, 2.0] {
        let scores = ucb_scores(&discrete, -2.0, lambda, 0, &prior)?;
        let s: Vec<String> = scores.iter().map(|(_, v)| format!("{v:.3}")).collect();
        println!("UCB{lambda} scores at c = -2: {}", s.join(" "));
    }
    let contexts = linspace(-3.0, -1.0, 10);
    for method in ["random", "ucb:1"] {
        let spec = BaselineSpec::parse(method)?;
        let d = baseline_designs(&discrete, &contexts, &spec, &mut RngStream::new(2))?;
        println!(
            "{method:>8}: {:?}",
            d.iter()
                .map(|a| a.as_f64() as usize + 1)
                .collect::<Vec<_>>()
        );
    }

    let bump = ContinuousBumpModel::default();
    let contexts = linspace(-3.5, 3.5, 8);
    for method in ["random:0.2", "random:2.0", "ucb:0", "ucb:2"] {
        let spec = BaselineSpec::parse(method)?;
        let d = baseline_designs(&bump, &contexts, &spec, &mut RngStream::new(3))?;
        println!(
            "{method:>10}: {:.2?}",
            d.iter().map(|a| a.as_f64()).collect::<Vec<_>>()
        );
    }
    Ok(())
}
