//! Reverse-mode gradients on a tape, a finite-difference check, and Adam
//! fitting a linear model.
//!
//! cargo run --example autodiff_basics

use ndarray::{arr2, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sea_core::autodiff::{adam_step, finite_diff_gradcheck, AdamConfig, AdamState, ParamStore, Tape, DEFAULT_STEP};

fn main() -> sea_core::Result<()> {
    let w = arr2(&[[1.0, -2.0], [0.5, 3.0]]);
    let x0 = arr2(&[[0.3, -0.7], [1.2, 0.4], [-0.5, 0.9]]);

    let tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let y = x.matmul(&tape.constant(w.clone()))?.relu()?.sum_all()?;
    let grads = tape.backward(y)?;
    println!("f(x) = {:.4}", y.item());
    println!("df/dx =\n{:.4}", grads.get(x));

    let err = finite_diff_gradcheck(|t, x| x.matmul(&t.constant(w.clone()))?.relu()?.sum_all(), &x0, DEFAULT_STEP)?;
    println!("max relative error against central differences: {err:.1e}");

    // recover y = 2 a - b + 0.5 with Adam
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let inputs = Array2::from_shape_simple_fn((64, 2), || rng.gen_range(-1.0..1.0));
    let targets: Vec<f64> = inputs.rows().into_iter().map(|r| 2.0 * r[0] - r[1] + 0.5).collect();
    let mut store = ParamStore::new();
    let weight = store.add("weight", Array2::zeros((2, 1)));
    let bias = store.add("bias", Array2::zeros((1, 1)));
    let mut adam = AdamState::new(&store, AdamConfig { lr: 0.05, ..AdamConfig::default() });
    for step in 0..=600 {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let pred = tape.constant(inputs.clone()).matmul(&p.get(weight))?.add_row(&p.get(bias))?;
        let loss = pred.l1_loss(targets.clone().into())?;
        if step % 200 == 0 {
            println!("step {step:>3} L1 loss {:.5}", loss.item());
        }
        let g = p.grads(&tape.backward(loss)?);
        adam_step(&mut store, &g, &mut adam)?;
    }
    println!("weight {:.3} bias {:.3}", store.get(weight).t(), store.get(bias));
    Ok(())
}
