//! Reverse-mode gradients on a small network, checked against central
//! finite differences.

use maxeig::autodiff::gradcheck::max_relative_error;
use maxeig::autodiff::{AdamConfig, AdamState, Tape, Tensor};
use maxeig::random::{Dist, RngStream};

fn main() -> maxeig::Result<()> {
    let mut rng = RngStream::new(1);
    let x = rng.sample(Dist::StandardNormal, &[8, 3])?;
    let w = rng.sample(Dist::StandardNormal, &[3, 2])?;
    let b = Tensor::vector(vec![0.1, -0.2]);

    let tape = Tape::new();
    let (xv, wv, bv) = (
        tape.constant(x.clone()),
        tape.param(w.clone()),
        tape.param(b.clone()),
    );
    let loss = xv.affine(wv, bv, true)?.logsumexp(1)?.mean_all();
    let grads = tape.backward(loss)?;
    println!("loss {:.6}", loss.item());
    println!("dL/dW {:?}", grads.get(wv).map(|g| g.data().to_vec()));

    let err = max_relative_error(
        &[x, w.clone(), b.clone()],
        |_, v| Ok(v[0].affine(v[1], v[2], true)?.logsumexp(1)?.mean_all()),
        1e-5,
    )?;
    println!("max relative error vs finite differences: {err:.2e}");

    // a few Adam steps on the same objective
    let mut params = [w, b];
    let mut adam = AdamState::new(
        AdamConfig {
            lr: 0.05,
            ..Default::default()
        },
        &params.iter().collect::<Vec<_>>(),
    );
    for step in 0..5 {
        let tape = Tape::new();
        let xv = tape.constant(rng.sample(Dist::StandardNormal, &[8, 3])?);
        let (wv, bv) = (tape.param(params[0].clone()), tape.param(params[1].clone()));
        let loss = xv.affine(wv, bv, true)?.logsumexp(1)?.mean_all();
        let grads = tape.backward(loss)?;
        let g = [grads.get(wv), grads.get(bv)];
        adam.step(&mut params.iter_mut().collect::<Vec<_>>(), &g)?;
        println!("step {step}: loss {:.4}", loss.item());
    }
    Ok(())
}
