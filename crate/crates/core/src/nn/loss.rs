//! Plaintext-side loss and prediction circuit: softmax, categorical
//! cross-entropy, mean squared error, argmax and one-hot coding.

use serde_json::{json, Value};

use super::merged_gradient;
use crate::error::{Error, Result};
use crate::firing::{BACKWARD, FORWARD};
use crate::graph::{Category, ComputationNode, Fan};
use crate::signal::{NodeOutput, Signal};
use crate::tensor;

pub const CCE_EPSILON: f64 = 1e-12;

pub fn softmax(a: &[f64]) -> Vec<f64> {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    Ok(())
}

pub fn cce_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    same_len(p, y)?;
    Ok(-p.iter().zip(y).map(|(p, y)| y * (p + CCE_EPSILON).ln()).sum::<f64>())
}

/// Gradient of cross-entropy after softmax with respect to the logits.
pub fn cce_gradient(p: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    same_len(p, y)?;
    Ok(p.iter().zip(y).map(|(p, y)| p - y).collect())
}

/// Loss and gradient with respect to the prediction.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    same_len(pred, target)?;
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(a: &[f64]) -> Result<usize> {
    if a.is_empty() {
        return Err(Error::Domain("argmax of an empty vector".into()));
    }
    Ok(a.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > a[best] { i } else { best }))
}

pub fn argmax_onehot(a: &[f64]) -> Result<Vec<f64>> {
    onehot_encode(argmax(a)?, a.len())
}

pub fn onehot_encode(label: usize, classes: usize) -> Result<Vec<f64>> {
    if label >= classes {
        return Err(Error::Domain(format!("label {label} outside {classes} classes")));
    }
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    Ok(v)
}

pub fn onehot_decode(v: &[f64]) -> Result<usize> {
    argmax(v)
}

fn plain_values(signal: &Signal) -> Result<Vec<f64>> {
    Ok(tensor::values(signal.as_plain()?))
}

fn label_of(signal: &Signal) -> Result<usize> {
    let v = plain_values(signal)?;
    match v.as_slice() {
        [label] if *label >= 0.0 && label.fract() == 0.0 => Ok(*label as usize),
        _ => Err(Error::Domain(format!("expected a single integer label, got {v:?}"))),
    }
}

/// Softmax over a decrypted activation vector. Its backward receptor passes
/// the loss gradient through unchanged: the cross-entropy node already
/// returns the gradient with respect to the logits.
#[derive(Debug, Clone, Default)]
pub struct Softmax {
    last: Option<Signal>,
}

impl ComputationNode for Softmax {
    fn kind(&self) -> &'static str {
        "Softmax"
    }

    fn category(&self) -> Category {
        Category::Loss
    }

    fn receptor(&mut self, name: &str, signal: Signal, fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                let p = Signal::Plain(tensor::vector(softmax(&plain_values(&signal)?)));
                self.last = Some(p.clone());
                Ok(NodeOutput::Broadcast(p))
            }
            BACKWARD => Ok(NodeOutput::Broadcast(Signal::Plain(merged_gradient(signal, fan.inputs)?))),
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({})
    }

    fn observe(&self) -> Option<&Signal> {
        self.last.as_ref()
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}

/// Inputs: `[prediction, target]` in edge order.
fn loss_inputs(signal: Signal) -> Result<(Vec<f64>, Vec<f64>)> {
    match signal {
        Signal::Stack(items) if items.len() == 2 => Ok((plain_values(&items[0])?, plain_values(&items[1])?)),
        _ => Err(Error::Arity("loss nodes take [prediction, target]".into())),
    }
}

fn loss_backward(grad: Vec<f64>, target_len: usize, fan: Fan) -> NodeOutput {
    let grad = Signal::Plain(tensor::vector(grad));
    if fan.outputs > 1 {
        NodeOutput::Generated(vec![grad, Signal::Plain(tensor::zeros(&[target_len]))])
    } else {
        NodeOutput::Broadcast(grad)
    }
}

fn seed_of(signal: &Signal) -> f64 {
    signal
        .as_plain()
        .ok()
        .filter(|t| t.len() == 1)
        .and_then(|t| t.iter().next().copied())
        .unwrap_or(1.0)
}

/// Categorical cross-entropy sink.
#[derive(Debug, Clone, Default)]
pub struct CrossEntropy {
    cache: Option<(Vec<f64>, Vec<f64>)>,
    loss: Option<Signal>,
}

impl ComputationNode for CrossEntropy {
    fn kind(&self) -> &'static str {
        "CCE"
    }

    fn category(&self) -> Category {
        Category::Loss
    }

    fn receptor(&mut self, name: &str, signal: Signal, fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                let (p, y) = loss_inputs(signal)?;
                self.loss = Some(Signal::scalar(cce_loss(&p, &y)?));
                self.cache = Some((p, y));
                Ok(NodeOutput::Nothing)
            }
            BACKWARD => {
                let (p, y) = self
                    .cache
                    .as_ref()
                    .ok_or_else(|| Error::State("cross-entropy backward before forward".into()))?;
                let seed = seed_of(&signal);
                let grad = cce_gradient(p, y)?.into_iter().map(|g| g * seed).collect();
                Ok(loss_backward(grad, y.len(), fan))
            }
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({})
    }

    fn observe(&self) -> Option<&Signal> {
        self.loss.as_ref()
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}

/// Mean squared error sink.
#[derive(Debug, Clone, Default)]
pub struct MeanSquaredError {
    cache: Option<(Vec<f64>, Vec<f64>)>,
    loss: Option<Signal>,
}

impl ComputationNode for MeanSquaredError {
    fn kind(&self) -> &'static str {
        "MSE"
    }

    fn category(&self) -> Category {
        Category::Loss
    }

    fn receptor(&mut self, name: &str, signal: Signal, fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                let (p, y) = loss_inputs(signal)?;
                self.loss = Some(Signal::scalar(mse_loss(&p, &y)?.0));
                self.cache = Some((p, y));
                Ok(NodeOutput::Nothing)
            }
            BACKWARD => {
                let (p, y) = self
                    .cache
                    .as_ref()
                    .ok_or_else(|| Error::State("mse backward before forward".into()))?;
                let seed = seed_of(&signal);
                let grad = mse_loss(p, y)?.1.into_iter().map(|g| g * seed).collect();
                Ok(loss_backward(grad, y.len(), fan))
            }
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({})
    }

    fn observe(&self) -> Option<&Signal> {
        self.loss.as_ref()
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}

/// Zero gradient shaped like the cached forward input.
fn zeros_like(cache: &Option<Vec<usize>>) -> Result<NodeOutput> {
    let shape = cache
        .as_ref()
        .ok_or_else(|| Error::State("backward before forward".into()))?;
    Ok(NodeOutput::Broadcast(Signal::Plain(tensor::zeros(shape))))
}

/// One-hot of the largest activation. Prediction branch only: its backward
/// receptor returns zeros.
#[derive(Debug, Clone, Default)]
pub struct Argmax {
    shape: Option<Vec<usize>>,
}

impl ComputationNode for Argmax {
    fn kind(&self) -> &'static str {
        "Argmax"
    }

    fn category(&self) -> Category {
        Category::Output
    }

    fn receptor(&mut self, name: &str, signal: Signal, _fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                let values = plain_values(&signal)?;
                self.shape = Some(signal.shape()?);
                Ok(NodeOutput::Broadcast(Signal::Plain(tensor::vector(argmax_onehot(&values)?))))
            }
            BACKWARD => zeros_like(&self.shape),
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({})
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone)]
pub struct OneHotEncode {
    classes: usize,
}

impl OneHotEncode {
    pub fn new(classes: usize) -> Self {
        OneHotEncode { classes }
    }

    pub fn from_config(config: &Value) -> Result<Self> {
        let classes = config
            .get("classes")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Schema("OneHotEncode needs `classes`".into()))?;
        Ok(Self::new(classes as usize))
    }
}

impl ComputationNode for OneHotEncode {
    fn kind(&self) -> &'static str {
        "OneHotEncode"
    }

    fn category(&self) -> Category {
        Category::Input
    }

    fn receptor(&mut self, name: &str, signal: Signal, _fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                let v = onehot_encode(label_of(&signal)?, self.classes)?;
                Ok(NodeOutput::Broadcast(Signal::Plain(tensor::vector(v))))
            }
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({ "classes": self.classes })
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone, Default)]
pub struct OneHotDecode {
    shape: Option<Vec<usize>>,
}

impl ComputationNode for OneHotDecode {
    fn kind(&self) -> &'static str {
        "OneHotDecode"
    }

    fn category(&self) -> Category {
        Category::Output
    }

    fn receptor(&mut self, name: &str, signal: Signal, _fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                let label = onehot_decode(&plain_values(&signal)?)?;
                self.shape = Some(signal.shape()?);
                Ok(NodeOutput::Broadcast(Signal::scalar(label as f64)))
            }
            BACKWARD => zeros_like(&self.shape),
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({})
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}
