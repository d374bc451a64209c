//! Short training run, checkpoint round trip, routing report and
//! over-smoothing table on the reloaded model.
//!
//! cargo run --release --example checkpoint_diagnostics

use sea_core::graph::SbmConfig;
use sea_core::sea::{prepare, InputSpec, SeaConfig, SeaModel, Task, Variant};
use sea_core::train::{evaluate, expert_distribution_report, oversmoothing_diagnostic, train_prepared, DataSource, TrainConfig};

fn sbm(num_graphs: usize, seed: u64) -> DataSource {
    DataSource::Sbm(SbmConfig {
        num_graphs,
        nodes_per_block: 8,
        num_blocks: 2,
        p_intra: 0.5,
        p_inter: 0.1,
        feature_vocab: 3,
        seed,
    })
}

fn main() -> anyhow::Result<()> {
    let model = SeaConfig {
        num_experts: 3,
        hidden_dim: 16,
        ..SeaConfig::new(Variant::SeaGnn, Task::NodeClassification, InputSpec::Tokens(3))
    };
    let mut cfg = TrainConfig::new(model.clone(), sbm(20, 1), sbm(5, 2), sbm(5, 3));
    cfg.max_epochs = 5;
    cfg.eval_every = 1;
    let load = |d: &DataSource| -> anyhow::Result<_> { Ok(prepare(&d.load(None)?, &model)?) };
    let (train, val, test) = (load(&cfg.train_data)?, load(&cfg.val_data)?, load(&cfg.test_data)?);
    let out = train_prepared(&cfg, &train, &val, &test, &mut std::io::sink())?;
    println!("best epoch {} of {}", out.best_epoch, out.history.len());

    let path = std::env::temp_dir().join(format!("sea-example-{}.json", std::process::id()));
    out.best.save(&path)?;
    let reloaded = SeaModel::load(&path)?;
    std::fs::remove_file(&path)?;
    println!("reloaded parameters identical: {}", reloaded.params() == out.best.params());

    let (report, routing) = evaluate(&reloaded, &test, 8, "test", out.best_epoch)?;
    println!("test {:?} {:.4}, loss {:.4}", report.metric, report.value, report.loss);
    println!("{}", serde_json::to_string(&expert_distribution_report(&routing, 0.01)?)?);
    for row in oversmoothing_diagnostic(&reloaded, &test)? {
        println!("depth {} mean cosine {:?}", row.layer, row.mean_cosine);
    }
    Ok(())
}
