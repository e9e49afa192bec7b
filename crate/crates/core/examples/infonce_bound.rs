//! The InfoNCE bound on hand-built score matrices and with a separable
//! critic on simulated data.

use maxeig::autodiff::{Tape, Tensor};
use maxeig::mi_bound::{infonce, infonce_value, score_matrix, CriticPreset, Mode, SeparableCritic};
use maxeig::models::{sample_outcomes, ContextPair, ContinuousBumpModel, SimulatorModel};
use maxeig::random::RngStream;
use maxeig::trainer::max_values;

fn main() -> maxeig::Result<()> {
    let b = 64;
    println!("log B = {:.4}", (b as f64).ln());
    println!(
        "constant scores: {}",
        infonce_value(&Tensor::full(&[b, b], 2.0))?
    );
    let mut diag = Tensor::zeros(&[b, b]);
    for i in 0..b {
        diag.data_mut()[i * b + i] = 50.0;
    }
    println!("diagonal scores: {:.4}", infonce_value(&diag)?);

    let model = ContinuousBumpModel::default();
    let ctx = ContextPair::midpoints(10, -3.5, 3.5);
    let mut rng = RngStream::new(3);
    let critic = SeparableCritic::new(CriticPreset::Continuous, 10, 9, &mut rng);
    let psi = model.sample_prior(&mut rng, b);
    let tape = Tape::new();
    let designs = tape.constant(Tensor::vector(vec![1.0; 10]));
    let y = sample_outcomes(&model, &psi, designs, &ctx.experimental, &mut rng)?;
    let vars = critic.register(&tape, false);
    let m_star = tape.constant(max_values(&model, &psi, &ctx.evaluation));
    let (s, _) = score_matrix(&critic, &vars, y, m_star, Mode::Train)?;
    println!("untrained critic: {:.4}", infonce(s)?.item());
    Ok(())
}
