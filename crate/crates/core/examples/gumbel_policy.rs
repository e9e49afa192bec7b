//! Gumbel-Softmax relaxation of a treatment policy and its annealing
//! schedule.

use maxeig::autodiff::{Tape, Tensor};
use maxeig::random::RngStream;
use maxeig::trainer::{anneal_schedule, gumbel_softmax_relax, TrainConfig};

fn main() -> maxeig::Result<()> {
    let alpha = [0.1, 0.2, 0.3, 0.4];
    let logits: Vec<f64> = alpha.iter().map(|a: &f64| a.ln()).collect();
    let mut rng = RngStream::new(5);
    for (tau, hard) in [(2.0, false), (0.5, false), (0.1, false), (0.5, true)] {
        let tape = Tape::new();
        let l = tape.param(Tensor::new(vec![1, 4], logits.clone())?);
        let pi = gumbel_softmax_relax(l, tau, &mut rng, hard)?;
        println!(
            "tau {tau:<4} hard {hard:<5} sample {:.3?}",
            pi.value().data()
        );
    }

    let cfg = TrainConfig::default();
    for step in [0, 9_999, 10_000, 25_000, 39_999, 40_000, 49_999] {
        let (tau, hard) = anneal_schedule(step, &cfg);
        println!("step {step:>6}: tau {tau:.4} hard {hard}");
    }
    Ok(())
}
