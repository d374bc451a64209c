//! Memorize eight small regression graphs with each model variant.
//!
//! cargo run --release --example overfit_regression -- [steps]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sea_core::autodiff::AdamConfig;
use sea_core::graph::{EdgeFeatures, Graph, NodeFeatures, Target};
use sea_core::sea::{prepare, ForwardMode, InputSpec, ModelBatch, PreparedGraph, SeaConfig, SeaModel, Task, Variant};
use sea_core::train::{mae, Trainer};

fn graphs() -> Vec<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    (0..8)
        .map(|_| {
            let n = rng.gen_range(6..=10);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.gen_bool(0.35) {
                        edges.push((u, v));
                    }
                }
            }
            let nodes = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let efeat = (0..edges.len()).map(|_| rng.gen_range(0..3)).collect();
            let y = rng.gen_range(0.0..1.0);
            Graph::new(n, &edges, NodeFeatures::Tokens(nodes), Some(EdgeFeatures::Tokens(efeat)), Some(Target::Graph(y)))
                .expect("valid graph")
        })
        .collect()
}

fn main() -> anyhow::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(Ok(2000), |a| a.parse())?;
    let data = graphs();
    let targets: Vec<f64> = data.iter().map(|g| match g.target() { Some(Target::Graph(y)) => *y, _ => unreachable!() }).collect();
    let variants = [
        ("gnn", Variant::SeaGnn, 2, false),
        ("aggregated", Variant::SeaAggregated, 2, false),
        ("2-hop", Variant::SeaKhop, 2, false),
        ("2-hop-aug", Variant::SeaKhop, 2, true),
    ];
    for (name, variant, khop, augmented) in variants {
        let cfg = SeaConfig {
            num_experts: 4,
            hidden_dim: 32,
            khop,
            augmented,
            ..SeaConfig::new(variant, Task::GraphRegression, InputSpec::Tokens(4))
        };
        let prepared = prepare(&data, &cfg)?;
        let refs: Vec<&PreparedGraph> = prepared.iter().collect();
        let batch = ModelBatch::new(&refs, &cfg)?;
        let adam = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
        let mut trainer = Trainer::new(SeaModel::new(cfg.clone(), 0)?, adam);
        let start = std::time::Instant::now();
        let mut reached = None;
        let mut err = f64::NAN;
        for step in 0..steps {
            let mode = ForwardMode { epsilon: cfg.epsilon.at(step), epoch: step, seed: 0, ..ForwardMode::eval() };
            trainer.step(&batch, &mode)?;
            let (pred, _) = trainer.model.predict(&batch, &ForwardMode::eval())?;
            err = mae(&pred.column(0).to_vec(), &targets)?;
            if err < 0.05 && reached.is_none() {
                reached = Some(step + 1);
            }
        }
        println!(
            "{name:<11} final train MAE {err:.4}, first below 0.05 at step {reached:?}, {:.1}s",
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
