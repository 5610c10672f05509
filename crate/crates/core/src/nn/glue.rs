//! Structural nodes: entry points, pass-throughs, stacking and sinks.

use serde_json::{json, Value};

use super::config_u64;
use crate::error::{Error, Result};
use crate::firing::{BACKWARD, FORWARD};
use crate::graph::{Category, ComputationNode, Fan};
use crate::signal::{NodeOutput, Signal};
use crate::tensor;

/// Entry node. Forwards whatever it is stimulated with; the backward pass
/// ends here.
#[derive(Debug, Clone, Default)]
pub struct Input;

impl Input {
    pub fn new() -> Self {
        Input
    }
}

impl ComputationNode for Input {
    fn kind(&self) -> &'static str {
        "Input"
    }

    fn category(&self) -> Category {
        Category::Input
    }

    fn receptor(&mut self, name: &str, signal: Signal, _fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => Ok(NodeOutput::Broadcast(signal)),
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

/// Pass-through in both directions, with a configurable depth cost.
#[derive(Debug, Clone, Default)]
pub struct Identity {
    cost: u32,
}

impl Identity {
    pub fn with_cost(cost: u32) -> Self {
        Identity { cost }
    }

    pub fn from_config(config: &Value) -> Result<Self> {
        let cost = config_u64(config, "cost", 0);
        u32::try_from(cost)
            .map(Self::with_cost)
            .map_err(|_| Error::Schema(format!("cost {cost} out of range")))
    }
}

impl ComputationNode for Identity {
    fn kind(&self) -> &'static str {
        "Identity"
    }

    fn category(&self) -> Category {
        Category::Glue
    }

    fn cost(&self) -> u32 {
        self.cost
    }

    fn receptor(&mut self, name: &str, signal: Signal, _fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD | BACKWARD => Ok(NodeOutput::Broadcast(signal)),
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({ "cost": self.cost })
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}

/// Joins its in-edges into one stacked signal, and splits a stacked
/// gradient back over them.
#[derive(Debug, Clone, Default)]
pub struct Stack;

impl ComputationNode for Stack {
    fn kind(&self) -> &'static str {
        "Stack"
    }

    fn category(&self) -> Category {
        Category::Glue
    }

    fn receptor(&mut self, name: &str, signal: Signal, fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => Ok(NodeOutput::Broadcast(match signal {
                Signal::Stack(items) => Signal::Stack(items),
                single => Signal::Stack(vec![single]),
            })),
            BACKWARD => {
                let parts = if fan.inputs > 1 {
                    sum_stacks(signal.into_items())?
                } else {
                    signal.into_items()
                };
                Ok(NodeOutput::Generated(parts))
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

/// Elementwise sum of several equally long gradient stacks.
fn sum_stacks(stacks: Vec<Signal>) -> Result<Vec<Signal>> {
    let mut stacks = stacks.into_iter().map(Signal::into_items);
    let mut total: Vec<tensor::Tensor> = stacks
        .next()
        .ok_or_else(|| Error::State("empty gradient stack".into()))?
        .iter()
        .map(Signal::message)
        .collect::<Result<_>>()?;
    for stack in stacks {
        if stack.len() != total.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient stacks of {} and {} items",
                total.len(),
                stack.len()
            )));
        }
        for (acc, item) in total.iter_mut().zip(stack) {
            let g = item.message()?;
            if g.shape() != acc.shape() {
                return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", g.shape(), acc.shape())));
            }
            *acc += &g;
        }
    }
    Ok(total.into_iter().map(Signal::Plain).collect())
}

/// Sink that keeps the last value it received.
#[derive(Debug, Clone, Default)]
pub struct Output {
    value: Option<Signal>,
}

impl Output {
    pub fn value(&self) -> Option<&Signal> {
        self.value.as_ref()
    }
}

impl ComputationNode for Output {
    fn kind(&self) -> &'static str {
        "Output"
    }

    fn category(&self) -> Category {
        Category::Output
    }

    fn receptor(&mut self, name: &str, signal: Signal, _fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                self.value = Some(signal);
                Ok(NodeOutput::Nothing)
            }
            // the prediction branch carries no loss
            BACKWARD => {
                let shape = self
                    .value
                    .as_ref()
                    .ok_or_else(|| Error::State("output backward before forward".into()))?
                    .shape()?;
                Ok(NodeOutput::Broadcast(Signal::Plain(tensor::zeros(&shape))))
            }
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({})
    }

    fn observe(&self) -> Option<&Signal> {
        self.value.as_ref()
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}
