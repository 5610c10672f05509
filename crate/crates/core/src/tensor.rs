//! Plaintext n-dimensional arrays and a few helpers shared by both data kinds.

use ndarray::{ArrayD, IxDyn};

pub type Tensor = ArrayD<f64>;

/// A one-element tensor of shape `[1]`.
pub fn scalar(v: f64) -> Tensor {
    vector(vec![v])
}

pub fn vector(values: Vec<f64>) -> Tensor {
    let n = values.len();
    Tensor::from_shape_vec(IxDyn(&[n]), values).expect("1-d shape")
}

pub fn from_shape(shape: &[usize], values: Vec<f64>) -> Option<Tensor> {
    Tensor::from_shape_vec(IxDyn(shape), values).ok()
}

pub fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(IxDyn(shape))
}

/// Elements in logical (row-major) order.
pub fn values(t: &Tensor) -> Vec<f64> {
    t.iter().copied().collect()
}

/// Left-to-right sum. Both data kinds fold slots with this so that plaintext
/// and ciphertext runs agree bit for bit.
pub fn slot_sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v)
}

pub fn sum(t: &Tensor) -> f64 {
    t.iter().fold(0.0, |acc, v| acc + v)
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}
