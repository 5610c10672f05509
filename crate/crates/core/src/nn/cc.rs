//! Biased cross-correlation by kernel masquerading.
//!
//! Each window position gets a sparse, input-shaped copy of the kernel (its
//! weights at the window, zeros elsewhere). One elementwise product against
//! the input then selects and weights that window in a single multiplication,
//! and the bias is spread as `b/N` over the window's active slots so that a
//! later slot-sum yields `sum(k * x) + b`.

use serde_json::{json, Value};

use super::{config_f64, config_shape, config_u64, config_values, uniform_init};
use crate::error::{Error, Result};
use crate::firing::{BACKWARD, FORWARD};
use crate::graph::{Category, ComputationNode, Fan};
use crate::signal::{NodeOutput, Signal};
use crate::tensor::{self, Tensor};

/// Flat input indices covered by each window, in kernel row-major order.
pub fn window_indices(
    kernel_shape: &[usize],
    input_shape: &[usize],
    stride: usize,
) -> Result<Vec<Vec<usize>>> {
    if stride == 0 {
        return Err(Error::Shape("stride must be positive".into()));
    }
    if kernel_shape.len() != input_shape.len() {
        return Err(Error::Shape(format!(
            "kernel rank {} does not match input rank {}",
            kernel_shape.len(),
            input_shape.len()
        )));
    }
    if kernel_shape.iter().zip(input_shape).any(|(&k, &n)| k == 0 || k > n) {
        return Err(Error::Shape(format!(
            "kernel {kernel_shape:?} does not fit input {input_shape:?}"
        )));
    }
    let counts: Vec<usize> = kernel_shape
        .iter()
        .zip(input_shape)
        .map(|(&k, &n)| (n - k) / stride + 1)
        .collect();
    let input_strides = tensor::strides(input_shape);
    let kernel_offsets: Vec<usize> = multi_indices(kernel_shape)
        .map(|idx| dot(&idx, &input_strides))
        .collect();
    Ok(multi_indices(&counts)
        .map(|pos| {
            let origin: usize = pos
                .iter()
                .zip(&input_strides)
                .map(|(&p, &s)| p * stride * s)
                .sum();
            kernel_offsets.iter().map(|off| origin + off).collect()
        })
        .collect())
}

fn dot(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major enumeration of every index into `shape`.
fn multi_indices(shape: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = shape.iter().product();
    (0..total).map(move |mut flat| {
        let mut idx = vec![0; shape.len()];
        for d in (0..shape.len()).rev() {
            idx[d] = flat % shape[d];
            flat /= shape[d];
        }
        idx
    })
}

/// One sparse input-shaped kernel per window position.
pub fn masquerade_kernel(kernel: &Tensor, input_shape: &[usize], stride: usize) -> Result<Vec<Tensor>> {
    let windows = window_indices(kernel.shape(), input_shape, stride)?;
    let weights = tensor::values(kernel);
    Ok(windows
        .iter()
        .map(|slots| scatter(input_shape, slots, |j| weights[j]))
        .collect())
}

fn scatter(shape: &[usize], slots: &[usize], value: impl Fn(usize) -> f64) -> Tensor {
    let mut data = vec![0.0; shape.iter().product()];
    for (j, &slot) in slots.iter().enumerate() {
        data[slot] = value(j);
    }
    tensor::from_shape(shape, data).expect("shape matches length")
}

#[derive(Debug, Clone)]
pub struct CcNode {
    input_shape: Vec<usize>,
    kernel: Tensor,
    bias: f64,
    stride: usize,
    seed: u64,
    windows: Vec<Vec<usize>>,
    masks: Vec<Tensor>,
    bias_masks: Vec<Tensor>,
    cache: Option<Tensor>,
    grad_kernel: Vec<f64>,
    grad_bias: f64,
}

impl CcNode {
    pub fn new(kernel: Tensor, bias: f64, input_shape: &[usize], stride: usize) -> Result<Self> {
        let windows = window_indices(kernel.shape(), input_shape, stride)?;
        let mut node = CcNode {
            input_shape: input_shape.to_vec(),
            grad_kernel: vec![0.0; kernel.len()],
            kernel,
            bias,
            stride,
            seed: 0,
            windows,
            masks: Vec::new(),
            bias_masks: Vec::new(),
            cache: None,
            grad_bias: 0.0,
        };
        node.rebuild_masks();
        Ok(node)
    }

    /// Uniform(-1/sqrt(N), 1/sqrt(N)) kernel from `seed`.
    pub fn seeded(
        kernel_shape: &[usize],
        input_shape: &[usize],
        stride: usize,
        bias: f64,
        seed: u64,
    ) -> Result<Self> {
        let n: usize = kernel_shape.iter().product();
        let kernel = tensor::from_shape(kernel_shape, uniform_init(n, n, seed))
            .ok_or_else(|| Error::Shape(format!("bad kernel shape {kernel_shape:?}")))?;
        let mut node = Self::new(kernel, bias, input_shape, stride)?;
        node.seed = seed;
        Ok(node)
    }

    pub fn from_config(config: &Value) -> Result<Self> {
        let input_shape = config_shape(config, "input_shape")?;
        let kernel_shape = config_shape(config, "kernel_shape")?;
        let stride = config_u64(config, "stride", 1) as usize;
        let seed = config_u64(config, "seed", 0);
        let mut node = Self::seeded(
            &kernel_shape,
            &input_shape,
            stride,
            config_f64(config, "bias_init", 0.0),
            seed,
        )?;
        if let Some(weights) = config_values(config, "kernel") {
            node.kernel = tensor::from_shape(&kernel_shape, weights)
                .ok_or_else(|| Error::Schema("kernel does not match kernel_shape".into()))?;
        }
        if let Some(b) = config.get("bias").and_then(Value::as_f64) {
            node.bias = b;
        }
        node.rebuild_masks();
        Ok(node)
    }

    fn rebuild_masks(&mut self) {
        let weights = tensor::values(&self.kernel);
        let share = self.bias / self.kernel.len() as f64;
        self.masks = self
            .windows
            .iter()
            .map(|slots| scatter(&self.input_shape, slots, |j| weights[j]))
            .collect();
        self.bias_masks = self
            .windows
            .iter()
            .map(|slots| scatter(&self.input_shape, slots, |_| share))
            .collect();
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Number of window positions.
    pub fn windows(&self) -> usize {
        self.windows.len()
    }

    pub fn grad_kernel(&self) -> &[f64] {
        &self.grad_kernel
    }

    pub fn grad_bias(&self) -> f64 {
        self.grad_bias
    }

    /// Per-window masked products plus commuted bias.
    pub fn forward(&mut self, x: &Signal) -> Result<Vec<Signal>> {
        if x.shape()? != self.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "input {:?}, expected {:?}",
                x.shape()?,
                self.input_shape
            )));
        }
        self.cache = Some(x.message()?);
        self.masks
            .iter()
            .zip(&self.bias_masks)
            .map(|(mask, bias)| x.mul_plain(mask)?.add_plain(bias))
            .collect()
    }

    /// Accumulate kernel and bias gradients from per-window gradients and
    /// return the input gradient. A one-element gradient applies to every
    /// slot of its window.
    pub fn backward(&mut self, grads: &[Tensor]) -> Result<Tensor> {
        let x = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("cross-correlation backward before forward".into()))?;
        if grads.len() > self.windows.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} window gradients for {} windows",
                grads.len(),
                self.windows.len()
            )));
        }
        let xs = x.as_slice().expect("cached input is contiguous");
        let weights = tensor::values(&self.kernel);
        let n = weights.len() as f64;
        let mut dx = vec![0.0; xs.len()];
        for (slots, grad) in self.windows.iter().zip(grads) {
            let g = grad.as_slice().expect("gradients are contiguous");
            let at = |slot: usize| if g.len() == 1 { g[0] } else { g[slot] };
            if g.len() != 1 && g.len() != xs.len() {
                return Err(Error::ShapeMismatch(format!(
                    "window gradient of {} values for {} slots",
                    g.len(),
                    xs.len()
                )));
            }
            for (j, &slot) in slots.iter().enumerate() {
                let gs = at(slot);
                self.grad_kernel[j] += gs * xs[slot];
                self.grad_bias += gs / n;
                dx[slot] += gs * weights[j];
            }
        }
        Ok(tensor::from_shape(&self.input_shape, dx).expect("input shape"))
    }
}

impl ComputationNode for CcNode {
    fn kind(&self) -> &'static str {
        "CC"
    }

    fn category(&self) -> Category {
        Category::Conv
    }

    fn cost(&self) -> u32 {
        1
    }

    fn receptor(&mut self, name: &str, signal: Signal, fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                if matches!(signal, Signal::Stack(_)) {
                    return Err(Error::ShapeMismatch("cross-correlation takes a single input".into()));
                }
                Ok(NodeOutput::Generated(self.forward(&signal)?))
            }
            BACKWARD => {
                let items = if fan.inputs <= 1 { vec![signal] } else { signal.into_items() };
                let grads = items.iter().map(Signal::message).collect::<Result<Vec<_>>>()?;
                Ok(NodeOutput::Broadcast(Signal::Plain(self.backward(&grads)?)))
            }
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({
            "input_shape": self.input_shape,
            "kernel_shape": self.kernel.shape(),
            "stride": self.stride,
            "bias_init": self.bias,
            "weight_init": "uniform",
            "seed": self.seed,
            "kernel": tensor::values(&self.kernel),
            "bias": self.bias,
        })
    }

    fn step(&mut self, lr: f64) {
        if let Some(k) = self.kernel.as_slice_mut() {
            super::sgd_update(k, &self.grad_kernel, lr).expect("gradient matches kernel");
        }
        self.bias -= lr * self.grad_bias;
        self.grad_kernel.iter_mut().for_each(|g| *g = 0.0);
        self.grad_bias = 0.0;
        self.rebuild_masks();
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}
