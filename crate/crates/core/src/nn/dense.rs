use serde_json::{json, Value};

use super::{config_f64, config_u64, config_values, merged_gradient, sgd_update, uniform_init};
use crate::error::{Error, Result};
use crate::firing::{BACKWARD, FORWARD};
use crate::graph::{Category, ComputationNode, Fan};
use crate::signal::{NodeOutput, Signal};
use crate::tensor::{self, Tensor};

/// A single fully connected neuron over a stack of inputs.
///
/// Input `i` is weighted by `w[i]` (one plaintext product, so one level on a
/// ciphertext), the weighted inputs are summed across the stack and the bias
/// is spread as `b/n` over the `n` slots of the result.
#[derive(Debug, Clone)]
pub struct DenseNode {
    weights: Vec<f64>,
    bias: f64,
    seed: u64,
    cache: Vec<Tensor>,
    stacked: bool,
    grad_weights: Vec<f64>,
    grad_bias: f64,
}

impl DenseNode {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        DenseNode {
            grad_weights: vec![0.0; weights.len()],
            weights,
            bias,
            seed: 0,
            cache: Vec::new(),
            stacked: false,
            grad_bias: 0.0,
        }
    }

    pub fn seeded(inputs: usize, bias: f64, seed: u64) -> Self {
        let mut node = Self::new(uniform_init(inputs, inputs, seed), bias);
        node.seed = seed;
        node
    }

    pub fn from_config(config: &Value) -> Result<Self> {
        let seed = config_u64(config, "seed", 0);
        let mut node = match config_values(config, "weights") {
            Some(w) => {
                let mut n = Self::new(w, config_f64(config, "bias_init", 0.0));
                n.seed = seed;
                n
            }
            None => {
                let inputs = config
                    .get("inputs")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| Error::Schema("Dense needs `inputs` or `weights`".into()))?;
                Self::seeded(inputs as usize, config_f64(config, "bias_init", 0.0), seed)
            }
        };
        if let Some(b) = config.get("bias").and_then(Value::as_f64) {
            node.bias = b;
        }
        Ok(node)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn grad_weights(&self) -> &[f64] {
        &self.grad_weights
    }

    pub fn grad_bias(&self) -> f64 {
        self.grad_bias
    }

    pub fn forward(&mut self, xs: &[Signal]) -> Result<Signal> {
        if xs.len() != self.weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs for {} weights",
                xs.len(),
                self.weights.len()
            )));
        }
        let shape = xs[0].shape()?;
        let mut acc: Option<Signal> = None;
        for (x, &w) in xs.iter().zip(&self.weights) {
            if x.shape()? != shape {
                return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape()?, shape)));
            }
            let term = x.mul_plain(&tensor::scalar(w))?;
            acc = Some(match acc {
                None => term,
                Some(sum) => sum.add(&term)?,
            });
        }
        let n = shape.iter().product::<usize>().max(1) as f64;
        self.cache = xs.iter().map(Signal::message).collect::<Result<_>>()?;
        acc.expect("at least one input").add_plain(&tensor::scalar(self.bias / n))
    }

    /// Returns the gradient for each input.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Vec<Tensor>> {
        if self.cache.is_empty() {
            return Err(Error::State("dense backward before forward".into()));
        }
        let n = grad.len() as f64;
        for (i, x) in self.cache.iter().enumerate() {
            if x.shape() != grad.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient {:?} for input {:?}",
                    grad.shape(),
                    x.shape()
                )));
            }
            self.grad_weights[i] += grad.iter().zip(x.iter()).map(|(g, x)| g * x).sum::<f64>();
        }
        self.grad_bias += tensor::sum(grad) / n;
        Ok(self.weights.iter().map(|&w| grad.mapv(|g| g * w)).collect())
    }
}

impl ComputationNode for DenseNode {
    fn kind(&self) -> &'static str {
        "Dense"
    }

    fn category(&self) -> Category {
        Category::Dense
    }

    fn cost(&self) -> u32 {
        1
    }

    fn receptor(&mut self, name: &str, signal: Signal, fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                self.stacked = matches!(signal, Signal::Stack(_));
                let xs = signal.into_items();
                Ok(NodeOutput::Broadcast(self.forward(&xs)?))
            }
            BACKWARD => {
                let grad = merged_gradient(signal, fan.inputs)?;
                let dx: Vec<Signal> = self.backward(&grad)?.into_iter().map(Signal::Plain).collect();
                Ok(if fan.outputs > 1 {
                    NodeOutput::Generated(dx)
                } else if self.stacked {
                    NodeOutput::Broadcast(Signal::Stack(dx))
                } else {
                    NodeOutput::Broadcast(dx.into_iter().next().expect("one input"))
                })
            }
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({
            "inputs": self.weights.len(),
            "bias_init": self.bias,
            "weight_init": "uniform",
            "seed": self.seed,
            "weights": self.weights,
            "bias": self.bias,
        })
    }

    fn step(&mut self, lr: f64) {
        sgd_update(&mut self.weights, &self.grad_weights, lr).expect("gradient matches weights");
        self.bias -= lr * self.grad_bias;
        self.grad_weights.iter_mut().for_each(|g| *g = 0.0);
        self.grad_bias = 0.0;
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autofhe::parameterise;
    use crate::ckks::{encrypt, KeyPair};

    #[test]
    fn weighted_sum_of_ciphertexts() {
        let kp = KeyPair::generate(parameterise(1, 40, 1.5).unwrap());
        let xs = vec![
            Signal::Cipher(encrypt(&tensor::scalar(2.0), &kp).unwrap()),
            Signal::Cipher(encrypt(&tensor::scalar(3.0), &kp).unwrap()),
        ];
        let mut dense = DenseNode::new(vec![0.5, 0.5], 1.0);
        let out = dense.forward(&xs).unwrap();
        assert_eq!(out.message().unwrap(), tensor::scalar(3.5));
        match out {
            Signal::Cipher(ct) => assert_eq!(ct.mult_count(), 1),
            _ => panic!("expected a ciphertext"),
        }
    }

    #[test]
    fn one_hot_weights_select_an_input() {
        let xs: Vec<Signal> = [4.0, 9.0, -1.0].iter().map(|&v| Signal::scalar(v)).collect();
        let mut dense = DenseNode::new(vec![0.0, 1.0, 0.0], 0.0);
        assert_eq!(dense.forward(&xs).unwrap(), Signal::scalar(9.0));
    }

    #[test]
    fn rejects_wrong_input_count() {
        let mut dense = DenseNode::new(vec![1.0, 1.0], 0.0);
        assert!(matches!(
            dense.forward(&[Signal::scalar(1.0)]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn backward_routes_per_edge_or_as_stack() {
        let mut dense = DenseNode::new(vec![2.0, -1.0], 0.0);
        let stack = Signal::Stack(vec![Signal::scalar(1.0), Signal::scalar(1.0)]);
        dense.receptor(FORWARD, stack.clone(), Fan { inputs: 2, outputs: 1 }).unwrap();
        let out = dense
            .receptor(BACKWARD, Signal::scalar(1.0), Fan { inputs: 1, outputs: 2 })
            .unwrap();
        assert!(matches!(out, NodeOutput::Generated(ref v) if v.len() == 2));

        dense.receptor(FORWARD, stack, Fan { inputs: 1, outputs: 1 }).unwrap();
        let out = dense
            .receptor(BACKWARD, Signal::scalar(1.0), Fan { inputs: 1, outputs: 1 })
            .unwrap();
        assert_eq!(
            out,
            NodeOutput::Broadcast(Signal::Stack(vec![Signal::scalar(2.0), Signal::scalar(-1.0)]))
        );
    }
}
