//! The two network shapes: an image classifier and a time-series
//! regressor, both built from an encrypt, cross-correlate, rotate, dense
//! and decrypt pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ComputationalGraph;
use crate::nn::activation::{ReluApprox, SigmoidApprox};
use crate::nn::cc::{window_indices, CcNode};
use crate::nn::crypto::{Decrypt, Encrypt, Rotate};
use crate::nn::dense::DenseNode;
use crate::nn::glue::{Input, Output, Stack};
use crate::nn::loss::{Argmax, CrossEntropy, MeanSquaredError, OneHotDecode, OneHotEncode, Softmax};

pub const INPUT: &str = "x";
pub const TARGET: &str = "y";
pub const LOSS: &str = "loss";
pub const PREDICTION: &str = "y_hat";
pub const SOFTMAX: &str = "softmax";

/// What a built graph predicts, read back from its loss and target nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

impl Task {
    pub fn detect(g: &ComputationalGraph) -> Result<Task> {
        match g.node(LOSS)?.kind() {
            "CCE" => {
                let classes = g
                    .node(TARGET)?
                    .config()
                    .get("classes")
                    .and_then(serde_json::Value::as_u64)
                    .ok_or_else(|| Error::Schema("classifier target needs `classes`".into()))?;
                Ok(Task::Classification {
                    classes: classes as usize,
                })
            }
            "MSE" => Ok(Task::Regression),
            other => Err(Error::Schema(format!("unsupported loss kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphiraConfig {
    pub classes: usize,
    pub input_shape: Vec<usize>,
    pub kernel: Vec<usize>,
    pub stride: usize,
    pub relu_q: f64,
    pub seed: u64,
}

impl Default for SphiraConfig {
    fn default() -> Self {
        SphiraConfig {
            classes: 10,
            input_shape: vec![28, 28],
            kernel: vec![3, 3],
            stride: 1,
            relu_q: 1.0,
            seed: 0,
        }
    }
}

fn add_windows(g: &mut ComputationalGraph, windows: usize) -> Result<()> {
    g.add_node("stack", Box::new(Stack))?;
    for t in 0..windows {
        let rot = format!("rot-{t}");
        g.add_node(rot.clone(), Box::new(Rotate::default()))?;
        g.add_edge("cc", &rot)?;
        g.add_edge(&rot, "stack")?;
    }
    Ok(())
}

/// Image classifier: one cross-correlation kernel, a slot-sum rotation per
/// window, one dense neuron and ReLU per class, then decryption into a
/// softmax/cross-entropy loss branch and an argmax prediction branch.
pub fn build_sphira(cfg: &SphiraConfig) -> Result<ComputationalGraph> {
    let windows = window_indices(&cfg.kernel, &cfg.input_shape, cfg.stride)?.len();
    let mut g = ComputationalGraph::new();
    g.add_node(INPUT, Box::new(Input::new()))?;
    g.add_node("encrypt", Box::new(Encrypt::default()))?;
    g.add_node(
        "cc",
        Box::new(CcNode::seeded(&cfg.kernel, &cfg.input_shape, cfg.stride, 0.0, cfg.seed)?),
    )?;
    g.add_path(&[INPUT, "encrypt", "cc"])?;
    add_windows(&mut g, windows)?;
    g.add_node("decrypt", Box::new(Decrypt::default()))?;
    for c in 0..cfg.classes {
        let (dense, relu) = (format!("dense-{c}"), format!("relu-{c}"));
        let seed = cfg.seed.wrapping_add(1 + c as u64);
        g.add_node(dense.clone(), Box::new(DenseNode::seeded(windows, 0.0, seed)))?;
        g.add_node(relu.clone(), Box::new(ReluApprox::new(cfg.relu_q)?))?;
        g.add_path(&["stack", &dense, &relu, "decrypt"])?;
    }
    g.add_node(SOFTMAX, Box::new(Softmax::default()))?;
    g.add_node(TARGET, Box::new(OneHotEncode::new(cfg.classes)))?;
    g.add_node(LOSS, Box::new(CrossEntropy::default()))?;
    g.add_node("argmax", Box::new(Argmax::default()))?;
    g.add_node("decode", Box::new(OneHotDecode::default()))?;
    g.add_node(PREDICTION, Box::new(Output::default()))?;
    g.add_path(&["decrypt", SOFTMAX, LOSS])?;
    g.add_edge(TARGET, LOSS)?;
    g.add_path(&["decrypt", "argmax", "decode", PREDICTION])?;
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstellationConfig {
    /// Time steps per input window.
    pub window: usize,
    pub features: usize,
    /// Kernel length along the time axis; it spans every feature.
    pub kernel: usize,
    pub seed: u64,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        ConstellationConfig {
            window: 12,
            features: 2,
            kernel: 4,
            seed: 0,
        }
    }
}

/// Time-series regressor: 1D cross-correlation over time, slot-sum
/// rotations, one dense neuron, the cubic sigmoid, decryption, then an MSE
/// loss and a prediction sink.
pub fn build_constellation(cfg: &ConstellationConfig) -> Result<ComputationalGraph> {
    let input_shape = [cfg.window, cfg.features];
    let kernel = [cfg.kernel, cfg.features];
    let windows = window_indices(&kernel, &input_shape, 1)?.len();
    let mut g = ComputationalGraph::new();
    g.add_node(INPUT, Box::new(Input::new()))?;
    g.add_node("encrypt", Box::new(Encrypt::default()))?;
    g.add_node("cc", Box::new(CcNode::seeded(&kernel, &input_shape, 1, 0.0, cfg.seed)?))?;
    g.add_path(&[INPUT, "encrypt", "cc"])?;
    add_windows(&mut g, windows)?;
    g.add_node(
        "dense",
        Box::new(DenseNode::seeded(windows, 0.0, cfg.seed.wrapping_add(1))),
    )?;
    g.add_node("sigmoid", Box::new(SigmoidApprox::default()))?;
    g.add_node("decrypt", Box::new(Decrypt::default()))?;
    g.add_node(TARGET, Box::new(Input::new()))?;
    g.add_node(LOSS, Box::new(MeanSquaredError::default()))?;
    g.add_node(PREDICTION, Box::new(Output::default()))?;
    g.add_path(&["stack", "dense", "sigmoid", "decrypt", LOSS])?;
    g.add_edge(TARGET, LOSS)?;
    g.add_edge("decrypt", PREDICTION)?;
    Ok(g)
}
