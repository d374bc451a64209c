use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use sea_core::checks::run_gradient_suite;
use sea_core::graph::{generate_sbm, load_jsonl_dataset, write_jsonl_dataset, SbmConfig};
use sea_core::sea::{prepare, ForwardMode, ModelBatch, PreparedGraph, RoutingDecision, SeaModel};
use sea_core::train::{
    batches, evaluate, expert_distribution_report, init_threads_from_env, oversmoothing_diagnostic, train, Splits,
    TrainConfig, DEFAULT_REPORT_THRESHOLD,
};
use sea_core::SeaError;

#[derive(Parser)]
#[command(name = "sea", version, about = "Graph shell attention with mixture-of-experts routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config; epoch log goes to the configured file or stdout.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on the splits named in a config.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate a stochastic block model dataset as JSONL.
    GenSbm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// autodiff, gtl, sea or all
        #[arg(long, default_value = "all")]
        module: String,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Greedy routing distribution of a checkpoint over a JSONL dataset.
    ReportExperts {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_REPORT_THRESHOLD)]
        threshold: f64,
    },
    /// Mean pairwise cosine similarity of node states per expert depth.
    DiagOversmoothing {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn load_config(path: &Path) -> anyhow::Result<TrainConfig> {
    TrainConfig::from_json_file(path).with_context(|| format!("reading config {}", path.display()))
}

fn load_prepared(model: &SeaModel, data: &Path) -> anyhow::Result<Vec<PreparedGraph>> {
    let graphs = load_jsonl_dataset(data).with_context(|| format!("reading data {}", data.display()))?;
    if graphs.is_empty() {
        return Err(SeaError::EmptyDataset.into());
    }
    Ok(prepare(&graphs, model.config())?)
}

fn routing(model: &SeaModel, graphs: &[PreparedGraph]) -> anyhow::Result<Vec<RoutingDecision>> {
    let refs: Vec<&PreparedGraph> = graphs.iter().collect();
    let decisions = batches(&refs, 64)
        .par_iter()
        .map(|b| {
            let batch = ModelBatch::new(b, model.config())?;
            Ok(model.predict(&batch, &ForwardMode::eval())?.1)
        })
        .collect::<sea_core::Result<Vec<_>>>()?;
    Ok(decisions)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = load_config(&config)?;
            let out = train(&cfg, config.parent(), &mut std::io::stdout().lock())?;
            print_json(&json!({
                "best_epoch": out.best_epoch,
                "epochs": out.history.len(),
                "stop": out.stop,
                "test": out.test,
                "experts": out.experts,
            }))?;
        }
        Command::Eval { config, checkpoint } => {
            let cfg = load_config(&config)?;
            let model = SeaModel::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let splits = Splits::load(&cfg, config.parent())?;
            for (name, graphs) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
                let prepared = prepare(graphs, model.config())?;
                let (report, _) = evaluate(&model, &prepared, cfg.batch_size, name, 0)?;
                print_json(&report)?;
            }
        }
        Command::GenSbm { config, out } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let sbm: SbmConfig = serde_json::from_str(&text).map_err(SeaError::from)?;
            let graphs = generate_sbm(&sbm)?;
            let mut w = std::io::BufWriter::new(std::fs::File::create(&out).map_err(SeaError::from)?);
            write_jsonl_dataset(&mut w, &graphs)?;
            w.flush().map_err(SeaError::from)?;
            print_json(&json!({ "graphs": graphs.len(), "out": out }))?;
        }
        Command::Gradcheck { module, instances, seed } => {
            if instances == 0 {
                return Err(SeaError::Config("instances must be positive".into()).into());
            }
            let filter = (module != "all").then_some(module.as_str());
            let results = run_gradient_suite(filter, instances, seed)?;
            for r in &results {
                print_json(&json!({
                    "module": r.module,
                    "check": r.name,
                    "instances": r.instances,
                    "max_rel_error": r.max_error,
                    "pass": r.passed(),
                }))?;
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
            if !failed.is_empty() {
                bail!(CliFailure("gradcheck_failed", format!("{} of {} checks failed: {}", failed.len(), results.len(), failed.join(", "))));
            }
        }
        Command::ReportExperts { checkpoint, data, threshold } => {
            let model = SeaModel::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let graphs = load_prepared(&model, &data)?;
            let report = expert_distribution_report(&routing(&model, &graphs)?, threshold)?;
            print_json(&report)?;
        }
        Command::DiagOversmoothing { checkpoint, data } => {
            let model = SeaModel::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let graphs = load_prepared(&model, &data)?;
            for layer in oversmoothing_diagnostic(&model, &graphs)? {
                print_json(&layer)?;
            }
        }
    }
    Ok(())
}

/// Failure with an explicit error kind, for outcomes that are not library errors.
#[derive(Debug)]
struct CliFailure(&'static str, String);

impl std::fmt::Display for CliFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for CliFailure {}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(c) = e.downcast_ref::<CliFailure>() {
        return c.0;
    }
    e.chain()
        .find_map(|c| c.downcast_ref::<SeaError>())
        .map_or("other", SeaError::kind)
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let text: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            return fail("usage", text.join(" ").trim_start_matches("error: ").to_string(), 2);
        }
    };
    if let Err(e) = init_threads_from_env() {
        return fail(e.kind(), e.to_string(), 1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(error_kind(&e), format!("{e:#}"), 1),
    }
}
