//! Polynomial activations and their exact counterparts.

use std::f64::consts::PI;

use serde_json::{json, Value};

use super::{config_f64, merged_gradient};
use crate::error::{Error, Result};
use crate::firing::{BACKWARD, FORWARD};
use crate::graph::{Category, ComputationNode, Fan};
use crate::signal::{NodeOutput, Signal};
use crate::tensor::Tensor;

pub const SIGMOID_DEPTH: u32 = 2;
pub const RELU_DEPTH: u32 = 1;

pub const Q_MIN: f64 = 0.1;
pub const Q_MAX: f64 = 100.0;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    (1.0 - s) * s
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn relu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Cubic sigmoid approximation, good on roughly [-5, 5].
pub fn sigmoid_approx(x: f64) -> f64 {
    0.5 + 0.197 * x + -0.004 * x.powi(3)
}

pub fn sigmoid_approx_derivative(x: f64) -> f64 {
    0.197 + -0.012 * x * x
}

fn relu_quadratic(q: f64) -> f64 {
    4.0 / (3.0 * PI * q)
}

/// Quadratic ReLU approximation over the dynamic range `q`.
pub fn relu_approx(x: f64, q: f64) -> f64 {
    relu_quadratic(q) * x * x + 0.5 * x + q / (3.0 * PI)
}

pub fn relu_approx_derivative(x: f64, q: f64) -> f64 {
    8.0 / (3.0 * PI * q) * x + 0.5
}

/// Partial derivative of [`relu_approx`] with respect to the range `q`.
pub fn relu_approx_range_derivative(x: f64, q: f64) -> f64 {
    -(4.0 / (3.0 * PI * q * q)) * x * x + 1.0 / (3.0 * PI)
}

/// `0.5 + 0.197x - 0.004x^3` on either data kind; two levels on a
/// ciphertext (`x^2`, then `x^2 * x`).
pub fn sigmoid_approx_signal(x: &Signal) -> Result<Signal> {
    let square = x.mul(x)?;
    let cube = square.mul(x)?;
    cube.scale(-0.004)?.add(&x.scale(0.197)?)?.add_scalar(0.5)
}

/// One level on a ciphertext (`x^2`).
pub fn relu_approx_signal(x: &Signal, q: f64) -> Result<Signal> {
    if q <= 0.0 {
        return Err(Error::Domain(format!("relu range q must be positive, got {q}")));
    }
    let square = x.mul(x)?;
    square
        .scale(relu_quadratic(q))?
        .add(&x.scale(0.5)?)?
        .add_scalar(q / (3.0 * PI))
}

fn check_grad(grad: &Tensor, x: &Tensor) -> Result<()> {
    if grad.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "gradient {:?} for input {:?}",
            grad.shape(),
            x.shape()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ReluApprox {
    q: f64,
    cache: Option<Tensor>,
    grad_q: f64,
}

impl ReluApprox {
    pub fn new(q: f64) -> Result<Self> {
        if q <= 0.0 {
            return Err(Error::Domain(format!("relu range q must be positive, got {q}")));
        }
        Ok(ReluApprox {
            q,
            cache: None,
            grad_q: 0.0,
        })
    }

    pub fn from_config(config: &Value) -> Result<Self> {
        Self::new(config_f64(config, "q", 1.0))
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn grad_q(&self) -> f64 {
        self.grad_q
    }
}

impl ComputationNode for ReluApprox {
    fn kind(&self) -> &'static str {
        "ReluApprox"
    }

    fn category(&self) -> Category {
        Category::Dense
    }

    fn cost(&self) -> u32 {
        RELU_DEPTH
    }

    fn receptor(&mut self, name: &str, signal: Signal, fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                self.cache = Some(signal.message()?);
                Ok(NodeOutput::Broadcast(relu_approx_signal(&signal, self.q)?))
            }
            BACKWARD => {
                let grad = merged_gradient(signal, fan.inputs)?;
                let x = self
                    .cache
                    .as_ref()
                    .ok_or_else(|| Error::State("relu backward before forward".into()))?;
                check_grad(&grad, x)?;
                let q = self.q;
                let mut dx = grad.clone();
                dx.zip_mut_with(x, |g, &xv| *g *= relu_approx_derivative(xv, q));
                self.grad_q += grad
                    .iter()
                    .zip(x.iter())
                    .map(|(g, &xv)| g * relu_approx_range_derivative(xv, q))
                    .sum::<f64>();
                Ok(NodeOutput::Broadcast(Signal::Plain(dx)))
            }
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({ "q": self.q })
    }

    fn step(&mut self, lr: f64) {
        self.q = (self.q - lr * self.grad_q).clamp(Q_MIN, Q_MAX);
        self.grad_q = 0.0;
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SigmoidApprox {
    cache: Option<Tensor>,
}

impl ComputationNode for SigmoidApprox {
    fn kind(&self) -> &'static str {
        "SigmoidApprox"
    }

    fn category(&self) -> Category {
        Category::Dense
    }

    fn cost(&self) -> u32 {
        SIGMOID_DEPTH
    }

    fn receptor(&mut self, name: &str, signal: Signal, fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                self.cache = Some(signal.message()?);
                Ok(NodeOutput::Broadcast(sigmoid_approx_signal(&signal)?))
            }
            BACKWARD => {
                let grad = merged_gradient(signal, fan.inputs)?;
                let x = self
                    .cache
                    .as_ref()
                    .ok_or_else(|| Error::State("sigmoid backward before forward".into()))?;
                check_grad(&grad, x)?;
                let mut dx = grad;
                dx.zip_mut_with(x, |g, &xv| *g *= sigmoid_approx_derivative(xv));
                Ok(NodeOutput::Broadcast(Signal::Plain(dx)))
            }
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
