//! Two-block SBM node classification with a 2-hop shell-attention model.
//!
//! cargo run --release --example sbm_node_classification -- [epochs]

use std::io::Write;

use sea_core::graph::SbmConfig;
use sea_core::sea::{InputSpec, SeaConfig, Task, Variant};
use sea_core::train::{oversmoothing_diagnostic, train_prepared, DataSource, TrainConfig};
use sea_core::sea::prepare;

fn sbm(num_graphs: usize, seed: u64) -> SbmConfig {
    SbmConfig {
        num_graphs,
        nodes_per_block: 20,
        num_blocks: 2,
        p_intra: 0.5,
        p_inter: 0.05,
        feature_vocab: 3,
        seed,
    }
}

fn main() -> anyhow::Result<()> {
    let epochs = std::env::args().nth(1).map_or(Ok(100), |a| a.parse())?;
    let model = SeaConfig {
        khop: 2,
        num_experts: 4,
        num_classes: 2,
        ..SeaConfig::new(Variant::SeaKhop, Task::NodeClassification, InputSpec::Tokens(3))
    };
    let mut cfg = TrainConfig::new(
        model.clone(),
        DataSource::Sbm(sbm(200, 1)),
        DataSource::Sbm(sbm(50, 2)),
        DataSource::Sbm(sbm(50, 3)),
    );
    cfg.max_epochs = epochs;
    cfg.batch_size = 20;

    let load = |d: &DataSource| -> anyhow::Result<_> { Ok(prepare(&d.load(None)?, &model)?) };
    let (train, val, test) = (load(&cfg.train_data)?, load(&cfg.val_data)?, load(&cfg.test_data)?);
    let start = std::time::Instant::now();
    let mut log = std::io::stdout().lock();
    let out = train_prepared(&cfg, &train, &val, &test, &mut log)?;
    writeln!(log, "stopped: {:?} after {:.1}s", out.stop, start.elapsed().as_secs_f64())?;
    writeln!(log, "best epoch {} test accuracy {:.4}", out.best_epoch, out.test.value)?;
    writeln!(log, "experts: {}", serde_json::to_string(&out.experts)?)?;
    for row in oversmoothing_diagnostic(&out.best, &test)? {
        writeln!(log, "layer {} mean cosine {:?} over {} pairs", row.layer, row.mean_cosine, row.pairs)?;
    }
    Ok(())
}
