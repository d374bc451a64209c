use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Splits, TrainConfig};
use super::diagnostics::{expert_distribution_report, ExpertReport};
use super::metrics::{accuracy, mae, roc_auc, MetricKind, MetricsReport};
use super::schedule::{EarlyStopping, PlateauScheduler};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape};
use crate::error::{Result, SeaError};
use crate::graph::Target;
use crate::sea::{
    inverse_frequency_weights, prepare, ForwardMode, ModelBatch, PreparedGraph, RoutingDecision, SeaModel, Task,
};

/// Model plus optimizer state.
pub struct Trainer {
    pub model: SeaModel,
    pub adam: AdamState,
}

impl Trainer {
    pub fn new(model: SeaModel, adam: AdamConfig) -> Self {
        let adam = AdamState::new(model.params(), adam);
        Trainer { model, adam }
    }

    pub fn lr(&self) -> f64 {
        self.adam.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.adam.config.lr = lr;
    }

    /// One Adam step on `batch`; returns the loss before the update.
    pub fn step(&mut self, batch: &ModelBatch, mode: &ForwardMode) -> Result<(f64, RoutingDecision)> {
        let tape = Tape::new();
        let p = self.model.params().bind(&tape);
        let out = self.model.forward(&p, batch, mode)?;
        let loss = self.model.loss(out.predictions, batch, None)?;
        let value = loss.item();
        let grads = p.grads(&tape.backward(loss)?);
        drop(p);
        adam_step(self.model.params_mut(), &grads, &mut self.adam)?;
        Ok((value, out.routing))
    }
}

/// Splits `items` into consecutive batches of at most `size`.
pub fn batches<'a>(items: &[&'a PreparedGraph], size: usize) -> Vec<Vec<&'a PreparedGraph>> {
    items.chunks(size.max(1)).map(<[_]>::to_vec).collect()
}

struct BatchEval {
    /// Loss times its normalizer, so batches combine exactly.
    weighted_loss: f64,
    normalizer: f64,
    scores: Vec<f64>,
    targets: Vec<f64>,
    logits: Option<ndarray::Array2<f64>>,
    labels: Vec<usize>,
    routing: RoutingDecision,
}

fn eval_batch(model: &SeaModel, graphs: &[&PreparedGraph], weights: Option<&[f64]>) -> Result<BatchEval> {
    let cfg = model.config();
    let batch = ModelBatch::new(graphs, cfg)?;
    let tape = Tape::new();
    let p = model.params().bind_constant(&tape);
    let out = model.forward(&p, &batch, &ForwardMode::eval())?;
    let loss = model.loss(out.predictions, &batch, weights)?.item();
    let pred = out.predictions.value();
    Ok(match cfg.task {
        Task::NodeClassification => {
            let labels = batch.node_labels()?;
            let w = weights.expect("node tasks pass split weights");
            let normalizer: f64 = labels.iter().map(|&y| w[y]).sum();
            BatchEval {
                weighted_loss: loss * normalizer,
                normalizer,
                scores: Vec::new(),
                targets: Vec::new(),
                logits: Some(pred.as_ref().clone()),
                labels,
                routing: out.routing,
            }
        }
        _ => {
            let targets = batch.graph_targets()?;
            BatchEval {
                weighted_loss: loss * targets.len() as f64,
                normalizer: targets.len() as f64,
                scores: pred.column(0).to_vec(),
                targets,
                logits: None,
                labels: Vec::new(),
                routing: out.routing,
            }
        }
    })
}

/// Loss and task metric over a split with greedy routing and no dropout.
///
/// Node-classification losses use class weights computed over the whole
/// split, so the result does not depend on `batch_size`.
pub fn evaluate(
    model: &SeaModel,
    graphs: &[PreparedGraph],
    batch_size: usize,
    split: &str,
    epoch: usize,
) -> Result<(MetricsReport, Vec<RoutingDecision>)> {
    if graphs.is_empty() {
        return Err(SeaError::EmptyDataset);
    }
    let cfg = model.config();
    let weights = match cfg.task {
        Task::NodeClassification => {
            let mut all = Vec::new();
            for g in graphs {
                match g.graph.target() {
                    Some(Target::Node(y)) => all.extend_from_slice(y),
                    _ => return Err(SeaError::TaskMismatch("graph without node labels".into())),
                }
            }
            Some(inverse_frequency_weights(&all, cfg.num_classes))
        }
        _ => None,
    };
    let refs: Vec<&PreparedGraph> = graphs.iter().collect();
    let parts: Vec<BatchEval> = batches(&refs, batch_size)
        .par_iter()
        .map(|b| eval_batch(model, b, weights.as_deref()))
        .collect::<Result<_>>()?;

    let normalizer: f64 = parts.iter().map(|b| b.normalizer).sum();
    let loss = parts.iter().map(|b| b.weighted_loss).sum::<f64>() / normalizer;
    let kind = MetricKind::for_task(cfg.task);
    let value = match kind {
        MetricKind::Accuracy => {
            let views: Vec<_> = parts.iter().map(|b| b.logits.as_ref().expect("node task").view()).collect();
            let logits = ndarray::concatenate(ndarray::Axis(0), &views).expect("same class count");
            let labels: Vec<usize> = parts.iter().flat_map(|b| b.labels.iter().copied()).collect();
            accuracy(&logits, &labels)?
        }
        MetricKind::Mae | MetricKind::RocAuc => {
            let scores: Vec<f64> = parts.iter().flat_map(|b| b.scores.iter().copied()).collect();
            let targets: Vec<f64> = parts.iter().flat_map(|b| b.targets.iter().copied()).collect();
            if kind == MetricKind::Mae {
                mae(&scores, &targets)?
            } else {
                let labels: Vec<bool> = targets.iter().map(|&t| t > 0.5).collect();
                roc_auc(&scores, &labels)?
            }
        }
    };
    let report = MetricsReport {
        split: split.to_string(),
        epoch,
        loss,
        metric: kind,
        value,
    };
    Ok((report, parts.into_iter().map(|b| b.routing).collect()))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub test_metric: Option<f64>,
    pub epsilon: f64,
    /// Routing shares during this epoch's training steps.
    pub expert_frequencies: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    MinLr,
    EarlyStop,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub best: SeaModel,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    pub stop: StopReason,
    /// Best model on the test split.
    pub test: MetricsReport,
    /// Best model's greedy routing on the test split.
    pub experts: ExpertReport,
}

fn mix(a: u64, b: u64) -> u64 {
    (a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15)).rotate_left(17)
}

/// Full training run on prepared splits. Writes one JSON object per epoch to
/// `log`.
pub fn train_prepared(
    config: &TrainConfig,
    train: &[PreparedGraph],
    val: &[PreparedGraph],
    test: &[PreparedGraph],
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(SeaError::EmptyDataset);
    }
    let model = SeaModel::new(config.model.clone(), config.seed)?;
    let adam = AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let mut trainer = Trainer::new(model, adam);
    let mut scheduler = PlateauScheduler::new(config.lr, config.lr_reduce_factor, config.lr_patience);
    let metric = MetricKind::for_task(config.model.task);
    let mut stopper = EarlyStopping::new(metric, config.early_stop_patience);
    let mut best = (f64::INFINITY, trainer.model.clone(), 0);
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let mut order: Vec<&PreparedGraph> = train.iter().collect();

    for epoch in 1..=config.max_epochs {
        let epsilon = config.model.epsilon.at(epoch - 1);
        let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle.set_stream(epoch as u64);
        order.sort_by_key(|g| g.index);
        order.shuffle(&mut shuffle);

        let lr = trainer.lr();
        let mut loss_sum = 0.0;
        let mut loss_weight = 0.0;
        let mut counts = vec![0usize; config.model.num_experts];
        for (b, chunk) in batches(&order, config.batch_size).iter().enumerate() {
            let batch = ModelBatch::new(chunk, &config.model)?;
            let mode = ForwardMode {
                epsilon,
                epoch: epoch - 1,
                seed: config.seed,
                dropout_seed: Some(mix(mix(config.seed, epoch as u64), b as u64)),
                fixed_routing: None,
            };
            let (loss, routing) = trainer.step(&batch, &mode)?;
            if !loss.is_finite() {
                return Err(SeaError::NonFiniteLoss { epoch });
            }
            let w = chunk.len() as f64;
            loss_sum += loss * w;
            loss_weight += w;
            for &i in &routing.chosen {
                counts[i] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let expert_frequencies = counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect();

        let (val_report, _) = evaluate(&trainer.model, val, config.batch_size, "val", epoch)?;
        if !val_report.loss.is_finite() {
            return Err(SeaError::NonFiniteLoss { epoch });
        }
        if val_report.loss < best.0 {
            best = (val_report.loss, trainer.model.clone(), epoch);
        }
        let new_lr = scheduler.step(val_report.loss);
        trainer.set_lr(new_lr);

        let mut early = false;
        let test_metric = if epoch % config.eval_every == 0 {
            let (r, _) = evaluate(&trainer.model, test, config.batch_size, "test", epoch)?;
            early = stopper.update(r.value);
            Some(r.value)
        } else {
            None
        };

        let entry = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / loss_weight,
            val_loss: val_report.loss,
            val_metric: val_report.value,
            test_metric,
            epsilon,
            expert_frequencies,
        };
        serde_json::to_writer(&mut *log, &entry)?;
        writeln!(log)?;
        history.push(entry);

        if new_lr < config.min_lr {
            stop = StopReason::MinLr;
            break;
        }
        if early {
            stop = StopReason::EarlyStop;
            break;
        }
    }

    let (_, best_model, best_epoch) = best;
    let (test_report, decisions) = evaluate(&best_model, test, config.batch_size, "test", best_epoch)?;
    let experts = expert_distribution_report(&decisions, config.report_threshold)?;
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        history,
        stop,
        test: test_report,
        experts,
    })
}

/// Loads or generates the splits, trains, and writes the checkpoint and log
/// named in `config`. Without a log path the log goes to `fallback_log`.
pub fn train(config: &TrainConfig, base: Option<&std::path::Path>, fallback_log: &mut dyn Write) -> Result<TrainOutcome> {
    config.validate()?;
    let splits = Splits::load(config, base)?;
    let train = prepare(&splits.train, &config.model)?;
    let val = prepare(&splits.val, &config.model)?;
    let test = prepare(&splits.test, &config.model)?;
    let resolve = |p: &std::path::Path| match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    };
    let outcome = match &config.log {
        Some(path) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(resolve(path))?);
            let o = train_prepared(config, &train, &val, &test, &mut f)?;
            f.flush()?;
            o
        }
        None => train_prepared(config, &train, &val, &test, fallback_log)?,
    };
    if let Some(path) = &config.checkpoint {
        outcome.best.save(resolve(path))?;
    }
    Ok(outcome)
}
