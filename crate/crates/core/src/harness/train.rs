//! Provisioning, per-example training and evaluation over built graphs.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::build::{Task, INPUT, LOSS, PREDICTION, SOFTMAX, TARGET};
use super::data::{Dataset, Example};
use crate::autofhe::{apply_params, auto_he, default_entries, parameterise, provision_keys, ConcernPredicate, ParamGroups};
use crate::ckks::{CkksParams, Keyring, NoiseModel};
use crate::error::{Error, Result};
use crate::firing::{fire, fire_traced, TraceHook, BACKWARD, FORWARD};
use crate::graph::ComputationalGraph;
use crate::nn::loss::argmax;
use crate::signal::Signal;
use crate::tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataKind {
    Plaintext,
    Ciphertext,
}

impl FromStr for DataKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plaintext" => Ok(DataKind::Plaintext),
            "ciphertext" => Ok(DataKind::Ciphertext),
            other => Err(Error::Domain(format!("unknown data kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub scale_power: u32,
    pub special: f64,
    pub data_kind: DataKind,
    pub noise: Option<NoiseModel>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            lr: 0.01,
            seed: 0,
            scale_power: 40,
            special: 1.5,
            data_kind: DataKind::Plaintext,
            noise: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Domain("epochs must be at least 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Domain(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// What autoFHE decided for a graph, and the keys it now holds.
#[derive(Debug, Clone)]
pub struct Provisioning {
    pub groups: ParamGroups,
    pub params: BTreeMap<usize, CkksParams>,
    pub keyring: Arc<Keyring>,
}

/// Parameter groups of `g` from its encryption nodes.
pub fn discover_groups(g: &mut ComputationalGraph) -> Result<ParamGroups> {
    let entries = default_entries(g);
    let refs: Vec<&str> = entries.iter().map(String::as_str).collect();
    auto_he(g, &refs, &ConcernPredicate::default())
}

/// Parameterise and key every group of `groups` with the heuristic.
pub fn provision_groups(
    g: &mut ComputationalGraph,
    groups: ParamGroups,
    scale_power: u32,
    special: f64,
    noise: Option<NoiseModel>,
) -> Result<Provisioning> {
    let params = apply_params(g, &groups, |c| parameterise(i64::from(c), scale_power, special))?;
    let keyring = provision_keys(g, &groups, &params, noise)?;
    Ok(Provisioning {
        groups,
        params,
        keyring,
    })
}

/// For ciphertext runs, discover groups and provision keys. Plaintext runs
/// need nothing and return `None`.
pub fn prepare(g: &mut ComputationalGraph, cfg: &TrainConfig) -> Result<Option<Provisioning>> {
    match cfg.data_kind {
        DataKind::Plaintext => Ok(None),
        DataKind::Ciphertext => {
            let groups = discover_groups(g)?;
            provision_groups(g, groups, cfg.scale_power, cfg.special, cfg.noise).map(Some)
        }
    }
}

/// Result of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub loss: f64,
    /// Class probabilities, or the regression estimate.
    pub prediction: Vec<f64>,
}

impl Outcome {
    pub fn label(&self) -> usize {
        argmax(&self.prediction).unwrap_or(0)
    }
}

fn target_signal(task: Task, ex: &Example) -> Signal {
    match task {
        Task::Classification { .. } => Signal::scalar(ex.label() as f64),
        Task::Regression => Signal::scalar(ex.target),
    }
}

fn observed(g: &ComputationalGraph, id: &str) -> Result<Vec<f64>> {
    let signal = g
        .node(id)?
        .observe()
        .ok_or_else(|| Error::State(format!("`{id}` produced nothing")))?;
    Ok(tensor::values(&signal.message()?))
}

fn read_outcome(g: &ComputationalGraph, task: Task) -> Result<Outcome> {
    let loss = observed(g, LOSS)?[0];
    let prediction = match task {
        Task::Classification { .. } => observed(g, SOFTMAX)?,
        Task::Regression => observed(g, PREDICTION)?,
    };
    Ok(Outcome { loss, prediction })
}

/// Forward pass of one example through `x` and `y`.
pub fn run_example(g: &mut ComputationalGraph, task: Task, ex: &Example) -> Result<Outcome> {
    g.clear_signals();
    fire(
        g,
        &[INPUT, TARGET],
        &[FORWARD, FORWARD],
        vec![Signal::Plain(ex.x.clone()), target_signal(task, ex)],
    )?;
    read_outcome(g, task)
}

/// [`run_example`] reporting every engine event to `hook`.
pub fn run_example_traced(
    g: &mut ComputationalGraph,
    task: Task,
    ex: &Example,
    hook: &mut TraceHook<'_>,
) -> Result<Outcome> {
    g.clear_signals();
    fire_traced(
        g,
        &[INPUT, TARGET],
        &[FORWARD, FORWARD],
        vec![Signal::Plain(ex.x.clone()), target_signal(task, ex)],
        hook,
    )?;
    read_outcome(g, task)
}

/// Forward, backward from the prediction sink and the loss, then one SGD
/// step.
pub fn train_example(g: &mut ComputationalGraph, task: Task, ex: &Example, lr: f64) -> Result<Outcome> {
    let outcome = run_example(g, task, ex)?;
    fire(
        g,
        &[PREDICTION, LOSS],
        &[BACKWARD, BACKWARD],
        vec![Signal::scalar(1.0), Signal::scalar(1.0)],
    )?;
    g.step(lr);
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    /// Accuracy for classification, MAPE in percent for regression.
    pub metric: f64,
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classification { .. } => "accuracy",
        Task::Regression => "mape",
    }
}

/// Mean absolute percentage error, in percent.
pub fn mape(predictions: &[f64], targets: &[f64]) -> f64 {
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| ((t - p) / t).abs())
        .sum();
    100.0 * total / targets.len().max(1) as f64
}

/// MAPE of always predicting the mean training target.
pub fn mean_baseline_mape(train: &Dataset, test: &Dataset) -> f64 {
    let mean = train.targets().iter().sum::<f64>() / train.len().max(1) as f64;
    mape(&vec![mean; test.len()], &test.targets())
}

/// Mean loss and the task metric over `outcomes`.
pub fn summarize(task: Task, ds: &Dataset, outcomes: &[Outcome]) -> (f64, f64) {
    let n = outcomes.len().max(1) as f64;
    let loss = outcomes.iter().map(|o| o.loss).sum::<f64>() / n;
    let metric = match task {
        Task::Classification { .. } => {
            let hits = outcomes.iter().zip(ds.iter()).filter(|(o, ex)| o.label() == ex.label()).count();
            hits as f64 / n
        }
        Task::Regression => {
            let preds: Vec<f64> = outcomes.iter().map(|o| o.prediction[0]).collect();
            mape(&preds, &ds.targets())
        }
    };
    (loss, metric)
}

/// Per-example SGD for `cfg.epochs` epochs, visiting the training set in a
/// seeded order each epoch. A ciphertext run expects [`prepare`] to have
/// been called on `g`.
pub fn train(
    g: &mut ComputationalGraph,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let task = Task::detect(g)?;
    let mut rows = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let mut outcomes = Vec::with_capacity(order.len());
        for &i in &order {
            outcomes.push(train_example(g, task, &train_set.examples[i], cfg.lr)?);
        }
        let visited = Dataset::new(order.iter().map(|&i| train_set.examples[i].clone()).collect());
        let (loss, metric) = summarize(task, &visited, &outcomes);
        log::info!("epoch {epoch} train loss {loss:.6} {} {metric:.4}", metric_name(task));
        rows.push(MetricRow {
            epoch,
            split: "train".into(),
            loss,
            metric,
        });
        if let Some(test) = test_set {
            let outcomes = evaluate(g, test)?;
            let (loss, metric) = summarize(task, test, &outcomes);
            rows.push(MetricRow {
                epoch,
                split: "test".into(),
                loss,
                metric,
            });
        }
    }
    Ok(rows)
}

pub fn write_metrics(task: Task, rows: &[MetricRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["epoch", "split", "loss", metric_name(task)]).map_err(io)?;
    for row in rows {
        w.write_record([
            row.epoch.to_string(),
            row.split.clone(),
            row.loss.to_string(),
            row.metric.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Forward every example through its own copy of `g`, one at a time.
pub fn evaluate_sequential(g: &ComputationalGraph, ds: &Dataset) -> Result<Vec<Outcome>> {
    let task = Task::detect(g)?;
    let mut copy = g.clone();
    ds.iter().map(|ex| run_example(&mut copy, task, ex)).collect()
}

/// Forward every example, fanning out over graph copies on the rayon pool.
#[cfg(feature = "parallel")]
pub fn evaluate_parallel(g: &ComputationalGraph, ds: &Dataset) -> Result<Vec<Outcome>> {
    use rayon::prelude::*;
    let task = Task::detect(g)?;
    ds.examples
        .par_iter()
        .map_init(|| g.clone(), |copy, ex| run_example(copy, task, ex))
        .collect()
}

/// Parallel when the `parallel` feature is on, sequential otherwise. The
/// graph itself is left untouched.
pub fn evaluate(g: &ComputationalGraph, ds: &Dataset) -> Result<Vec<Outcome>> {
    #[cfg(feature = "parallel")]
    {
        evaluate_parallel(g, ds)
    }
    #[cfg(not(feature = "parallel"))]
    {
        evaluate_sequential(g, ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::serialize;
    use crate::harness::build::{build_sphira, SphiraConfig};
    use crate::harness::data::synthetic_blobs;

    fn small() -> (ComputationalGraph, Dataset) {
        let cfg = SphiraConfig {
            classes: 3,
            input_shape: vec![4, 4],
            kernel: vec![2, 2],
            ..SphiraConfig::default()
        };
        (build_sphira(&cfg).unwrap(), synthetic_blobs(12, 3, &[4, 4], 0.05, 0))
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("ciphertext".parse::<DataKind>().unwrap(), DataKind::Ciphertext);
        assert!("rot13".parse::<DataKind>().is_err());
    }

    #[test]
    fn zero_step_leaves_parameters_unchanged() {
        let (mut g, ds) = small();
        let before = serialize(&g);
        let task = Task::detect(&g).unwrap();
        for ex in ds.iter() {
            train_example(&mut g, task, ex, 0.0).unwrap();
        }
        assert_eq!(serialize(&g), before);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 2,
            lr: 0.05,
            ..TrainConfig::default()
        };
        let run = || {
            let (mut g, ds) = small();
            let rows = train(&mut g, &ds, Some(&ds), &cfg).unwrap();
            let mut out = Vec::new();
            write_metrics(Task::detect(&g).unwrap(), &rows, &mut out).unwrap();
            out
        };
        let a = run();
        assert_eq!(a, run());
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("epoch,split,loss,accuracy\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn sequential_and_parallel_evaluation_agree() {
        let (g, ds) = small();
        let seq = evaluate_sequential(&g, &ds).unwrap();
        assert_eq!(evaluate(&g, &ds).unwrap(), seq);
        assert_eq!(seq.len(), ds.len());
        assert!(seq.iter().all(|o| (o.prediction.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn ciphertext_run_matches_plaintext() {
        let (g, ds) = small();
        let plain = evaluate(&g, &ds).unwrap();
        let mut enc = g.clone();
        let cfg = TrainConfig {
            data_kind: DataKind::Ciphertext,
            ..TrainConfig::default()
        };
        let prov = prepare(&mut enc, &cfg).unwrap().unwrap();
        assert_eq!(prov.groups.costs, [1, 2, 0]);
        assert_eq!(evaluate(&enc, &ds).unwrap(), plain);
    }

    #[test]
    fn mape_and_baseline() {
        assert_eq!(mape(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(mape(&[1.5], &[1.0]), 50.0);
        let train = Dataset::new(vec![
            Example { x: tensor::scalar(0.0), target: 1.0 },
            Example { x: tensor::scalar(0.0), target: 3.0 },
        ]);
        assert!((mean_baseline_mape(&train, &train) - 200.0 / 3.0).abs() < 1e-12);
    }
}
