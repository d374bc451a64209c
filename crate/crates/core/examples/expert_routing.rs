//! Epsilon-greedy hard routing: the greedy choice, exploration frequencies
//! and the decaying exploration schedule.
//!
//! cargo run --example expert_routing

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sea_core::sea::{route, EpsilonSchedule};
use sea_core::train::expert_distribution_report;

fn main() -> sea_core::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h0 = Array2::from_shape_simple_fn((2000, 6), || rng.gen_range(-1.0..1.0));
    let router = Array2::from_shape_simple_fn((6, 4), || rng.gen_range(-1.0..1.0));

    let schedule = EpsilonSchedule::default();
    for epoch in [0, 5, 20, 60] {
        let eps = schedule.at(epoch);
        let d = route(&h0, &router, eps, 11);
        let explored = d.explored.iter().filter(|&&x| x).count();
        let report = expert_distribution_report(&[d], 0.01)?;
        println!(
            "epoch {epoch:>2} epsilon {eps:.4}: explored {explored:>4}, frequencies {:.3?}",
            report.frequencies
        );
    }

    let uniform = route(&h0, &router, 1.0, 11);
    println!("epsilon 1: {:.3?}", expert_distribution_report(&[uniform], 0.01)?.frequencies);

    let zero = route(&h0, &Array2::zeros((6, 4)), 0.0, 11);
    let report = expert_distribution_report(&[zero], 0.01)?;
    println!("zero router: every node picks expert 0, collapsed = {}", report.collapsed);
    Ok(())
}
