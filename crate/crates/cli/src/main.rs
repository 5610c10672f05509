//! Command-line front end: build graphs, report encryption parameters,
//! train, infer, compare plaintext against ciphertext, and export DOT.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fhegraph::document::{load, save, to_json, NodeRegistry};
use fhegraph::dot::export_dot;
use fhegraph::harness::build::{
    build_constellation, build_sphira, ConstellationConfig, SphiraConfig, Task, INPUT,
};
use fhegraph::harness::data::{self, load_csv, CsvLayout, Dataset};
use fhegraph::harness::train::{
    discover_groups, evaluate, mean_baseline_mape, metric_name, prepare, provision_groups, run_example_traced,
    summarize, train, write_metrics, DataKind, TrainConfig,
};
use fhegraph::ComputationalGraph;
use serde_json::json;

#[derive(Parser)]
#[command(name = "fhegraph", version, about = "Graph-native encrypted deep learning on a simulated CKKS backend")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in network as a graph document.
    Build(BuildArgs),
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Report parameter groups and CKKS parameters for a graph.
    Params(ParamsArgs),
    /// Train a graph on a CSV dataset and emit per-epoch metrics.
    Train(TrainArgs),
    /// Run a graph forward over a CSV dataset and print predictions.
    Infer(InferArgs),
    /// Run plaintext and ciphertext inference and diff the predictions.
    Compare(CompareArgs),
    /// Render a graph document as Graphviz DOT.
    ExportDot(DotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Network {
    Sphira,
    Constellation,
}

#[derive(Args)]
struct BuildArgs {
    network: Network,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Image side length (sphira) or window length (constellation).
    #[arg(long)]
    side: Option<usize>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Synthetic {
    Blobs,
    Series,
}

#[derive(Args)]
struct SynthArgs {
    kind: Synthetic,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Image side length for blobs, window length for series.
    #[arg(long)]
    side: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CryptoArgs {
    /// Scale power s; the encoding scale is 2^s.
    #[arg(long, default_value_t = 40)]
    scale: u32,
    /// Multiplier for the first and last primes.
    #[arg(long, default_value_t = 1.5)]
    special_multiplier: f64,
}

#[derive(Args)]
struct ParamsArgs {
    graph: PathBuf,
    #[command(flatten)]
    crypto: CryptoArgs,
}

#[derive(Args)]
struct DataArgs {
    graph: PathBuf,
    /// CSV rows: label or target, then the flattened input.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "plaintext")]
    data_kind: KindArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print engine events for the first example to stderr.
    #[arg(long)]
    trace: bool,
    #[command(flatten)]
    crypto: CryptoArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Plaintext,
    Ciphertext,
}

impl From<KindArg> for DataKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Plaintext => DataKind::Plaintext,
            KindArg::Ciphertext => DataKind::Ciphertext,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: DataArgs,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Examples to train on after a seeded shuffle; the rest are the test split.
    #[arg(long)]
    train_size: Option<usize>,
    /// Metrics CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the trained graph document.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: DataArgs,
    /// Predictions CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: DataArgs,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
}

#[derive(Args)]
struct DotArgs {
    graph: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_graph(path: &Path) -> Result<ComputationalGraph> {
    load(path, &NodeRegistry::builtin()).with_context(|| format!("loading graph {}", path.display()))
}

/// The input shape recorded on the graph's cross-correlation node.
fn input_shape(g: &ComputationalGraph) -> Result<Vec<usize>> {
    for (_, record) in g.records() {
        if let Some(shape) = record.node.config().get("input_shape") {
            return serde_json::from_value(shape.clone()).context("reading input_shape");
        }
    }
    bail!("graph has no node declaring an input shape after `{INPUT}`")
}

fn load_data(g: &ComputationalGraph, path: &Path) -> Result<(Task, Dataset)> {
    let task = Task::detect(g)?;
    let shape = input_shape(g)?;
    let layout = match task {
        Task::Classification { .. } => CsvLayout::Image { shape },
        Task::Regression => CsvLayout::Series { shape },
    };
    let ds = load_csv(path, &layout).with_context(|| format!("reading {}", path.display()))?;
    Ok((task, ds))
}

fn config(common: &DataArgs) -> TrainConfig {
    TrainConfig {
        seed: common.seed,
        scale_power: common.crypto.scale,
        special: common.crypto.special_multiplier,
        data_kind: common.data_kind.into(),
        ..TrainConfig::default()
    }
}

fn trace_first(g: &ComputationalGraph, task: Task, ds: &Dataset) -> Result<()> {
    let Some(ex) = ds.examples.first() else {
        return Ok(());
    };
    let mut copy = g.clone();
    let mut hook = |node: &str, receptor: &str, event| eprintln!("trace {node} {receptor} {event:?}");
    run_example_traced(&mut copy, task, ex, &mut hook)?;
    Ok(())
}

fn cmd_build(a: BuildArgs) -> Result<()> {
    let g = match a.network {
        Network::Sphira => {
            let side = a.side.unwrap_or(28);
            build_sphira(&SphiraConfig {
                classes: a.classes,
                input_shape: vec![side, side],
                stride: a.stride,
                seed: a.seed,
                ..SphiraConfig::default()
            })?
        }
        Network::Constellation => build_constellation(&ConstellationConfig {
            window: a.side.unwrap_or(12),
            seed: a.seed,
            ..ConstellationConfig::default()
        })?,
    };
    match a.out {
        Some(p) => save(&g, &p)?,
        None => println!("{}", to_json(&g)),
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut w = csv_writer(output(a.out.as_deref())?);
    match a.kind {
        Synthetic::Blobs => {
            let side = a.side.unwrap_or(28);
            let ds = data::synthetic_blobs(a.n, a.classes, &[side, side], 0.1, a.seed);
            for ex in ds.iter() {
                let mut row = vec![ex.label().to_string()];
                row.extend(ex.x.iter().map(|v| (v * 255.0).round().to_string()));
                w.write_record(&row)?;
            }
        }
        Synthetic::Series => {
            let window = a.side.unwrap_or(12);
            let ds = data::series_windows(&data::synthetic_series(a.n + window, a.seed), window);
            for ex in ds.iter() {
                let mut row = vec![ex.target.to_string()];
                row.extend(ex.x.iter().map(f64::to_string));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(w: Box<dyn Write>) -> csv::Writer<Box<dyn Write>> {
    csv::Writer::from_writer(w)
}

fn cmd_params(a: ParamsArgs) -> Result<()> {
    let mut g = load_graph(&a.graph)?;
    let groups = discover_groups(&mut g)?;
    let provisioned = provision_groups(&mut g, groups, a.crypto.scale, a.crypto.special_multiplier, None)?;
    let report = json!({
        "membership": provisioned.groups.membership,
        "costs": provisioned.groups.costs,
        "params": provisioned.params,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut g = load_graph(&a.common.graph)?;
    let (task, ds) = load_data(&g, &a.common.data)?;
    let cfg = TrainConfig {
        epochs: a.epochs as usize,
        lr: a.lr,
        ..config(&a.common)
    };
    cfg.validate()?;
    let (train_set, test_set) = match a.train_size {
        Some(n) => {
            let (tr, te) = ds.split(n, cfg.seed)?;
            (tr, Some(te))
        }
        None => (ds, None),
    };
    prepare(&mut g, &cfg)?;
    if a.common.trace {
        trace_first(&g, task, &train_set)?;
    }
    let rows = train(&mut g, &train_set, test_set.as_ref(), &cfg)?;
    write_metrics(task, &rows, output(a.out.as_deref())?)?;
    if let (Task::Regression, Some(test)) = (task, &test_set) {
        eprintln!("mean-predictor baseline mape {:.4}", mean_baseline_mape(&train_set, test));
    }
    if let Some(p) = a.save {
        save(&g, &p)?;
    }
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let mut g = load_graph(&a.common.graph)?;
    let (task, ds) = load_data(&g, &a.common.data)?;
    prepare(&mut g, &config(&a.common))?;
    if a.common.trace {
        trace_first(&g, task, &ds)?;
    }
    let outcomes = evaluate(&g, &ds)?;
    let mut w = csv_writer(output(a.out.as_deref())?);
    w.write_record(["index", "target", "prediction", "loss"])?;
    for (i, (o, ex)) in outcomes.iter().zip(ds.iter()).enumerate() {
        let prediction = match task {
            Task::Classification { .. } => o.label() as f64,
            Task::Regression => o.prediction[0],
        };
        w.write_record([i.to_string(), ex.target.to_string(), prediction.to_string(), o.loss.to_string()])?;
    }
    w.flush()?;
    let (loss, metric) = summarize(task, &ds, &outcomes);
    eprintln!("mean loss {loss:.6} {} {metric:.4}", metric_name(task));
    Ok(())
}

/// Whether plaintext and ciphertext predictions agree within the tolerance.
fn cmd_compare(a: CompareArgs) -> Result<bool> {
    let base = load_graph(&a.common.graph)?;
    let (task, ds) = load_data(&base, &a.common.data)?;
    let mut runs = Vec::new();
    for kind in [DataKind::Plaintext, DataKind::Ciphertext] {
        let mut g = base.clone();
        prepare(
            &mut g,
            &TrainConfig {
                data_kind: kind,
                ..config(&a.common)
            },
        )?;
        if a.common.trace && kind == DataKind::Ciphertext {
            trace_first(&g, task, &ds)?;
        }
        runs.push(evaluate(&g, &ds)?);
    }
    let worst = runs[0]
        .iter()
        .zip(&runs[1])
        .flat_map(|(p, c)| p.prediction.iter().zip(&c.prediction).map(|(a, b)| (a - b).abs()))
        .fold(0.0f64, f64::max);
    let ok = worst < a.tolerance;
    println!(
        "{} examples, max abs prediction difference {worst:e}, tolerance {:e}: {}",
        ds.len(),
        a.tolerance,
        if ok { "match" } else { "MISMATCH" }
    );
    Ok(ok)
}

fn cmd_dot(a: DotArgs) -> Result<()> {
    let g = load_graph(&a.graph)?;
    write!(output(a.out.as_deref())?, "{}", export_dot(&g))?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Build(a) => cmd_build(a)?,
        Command::Synth(a) => cmd_synth(a)?,
        Command::Params(a) => cmd_params(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Infer(a) => cmd_infer(a)?,
        Command::Compare(a) => return cmd_compare(a),
        Command::ExportDot(a) => cmd_dot(a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
