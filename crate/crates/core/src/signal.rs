//! Values carried along edges, and the array surface nodes compute with.
//!
//! Node code is written once against [`Signal`]; a plaintext tensor and a
//! virtual ciphertext respond to the same calls, so a graph does not care
//! which kind of data it is fed.

use crate::ckks::VirtualCiphertext;
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    Plain(Tensor),
    Cipher(VirtualCiphertext),
    /// Inputs stacked in in-edge order, or a list produced by a node.
    Stack(Vec<Signal>),
}

/// What a receptor hands back to the firing engine.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeOutput {
    /// The same value on every outbound edge.
    Broadcast(Signal),
    /// One value per outbound edge, in edge insertion order.
    Generated(Vec<Signal>),
    Nothing,
}

impl From<Tensor> for Signal {
    fn from(t: Tensor) -> Self {
        Signal::Plain(t)
    }
}

impl From<VirtualCiphertext> for Signal {
    fn from(ct: VirtualCiphertext) -> Self {
        Signal::Cipher(ct)
    }
}

impl Signal {
    pub fn scalar(v: f64) -> Signal {
        Signal::Plain(tensor::scalar(v))
    }

    pub fn is_cipher(&self) -> bool {
        matches!(self, Signal::Cipher(_))
    }

    pub fn shape(&self) -> Result<Vec<usize>> {
        match self {
            Signal::Plain(t) => Ok(t.shape().to_vec()),
            Signal::Cipher(ct) => Ok(ct.shape().to_vec()),
            Signal::Stack(_) => Err(Error::ShapeMismatch("stacked signal has no array shape".into())),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Signal::Plain(t) => t.len(),
            Signal::Cipher(ct) => ct.len(),
            Signal::Stack(items) => items.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Split a stack into its items; a bare value becomes a one-item list.
    pub fn into_items(self) -> Vec<Signal> {
        match self {
            Signal::Stack(items) => items,
            other => vec![other],
        }
    }

    pub fn as_plain(&self) -> Result<&Tensor> {
        match self {
            Signal::Plain(t) => Ok(t),
            _ => Err(Error::PlaintextRequired),
        }
    }

    pub fn into_plain(self) -> Result<Tensor> {
        match self {
            Signal::Plain(t) => Ok(t),
            _ => Err(Error::PlaintextRequired),
        }
    }

    /// The underlying values regardless of data kind. Used on the training
    /// side, where the simulation stands in for the data owner.
    pub fn message(&self) -> Result<Tensor> {
        match self {
            Signal::Plain(t) => Ok(t.clone()),
            Signal::Cipher(ct) => Ok(ct.message()),
            Signal::Stack(_) => Err(Error::ShapeMismatch("stacked signal has no array shape".into())),
        }
    }

    pub fn add(&self, rhs: &Signal) -> Result<Signal> {
        match (self, rhs) {
            (Signal::Plain(a), Signal::Plain(b)) => plain_binary(a, b, |x, y| x + y).map(Signal::Plain),
            (Signal::Cipher(a), Signal::Cipher(b)) => a.add(b).map(Signal::Cipher),
            (Signal::Cipher(a), Signal::Plain(b)) | (Signal::Plain(b), Signal::Cipher(a)) => {
                a.add(b).map(Signal::Cipher)
            }
            _ => Err(Error::ShapeMismatch("cannot add stacked signals".into())),
        }
    }

    pub fn add_plain(&self, rhs: &Tensor) -> Result<Signal> {
        match self {
            Signal::Plain(a) => plain_binary(a, rhs, |x, y| x + y).map(Signal::Plain),
            Signal::Cipher(a) => a.add(rhs).map(Signal::Cipher),
            Signal::Stack(_) => Err(Error::ShapeMismatch("cannot add to a stacked signal".into())),
        }
    }

    /// Elementwise product. Any product involving a ciphertext consumes one
    /// level of its modulus chain.
    pub fn mul(&self, rhs: &Signal) -> Result<Signal> {
        match (self, rhs) {
            (Signal::Plain(a), Signal::Plain(b)) => plain_binary(a, b, |x, y| x * y).map(Signal::Plain),
            (Signal::Cipher(a), Signal::Cipher(b)) => a.multiply(b).map(Signal::Cipher),
            (Signal::Cipher(a), Signal::Plain(b)) | (Signal::Plain(b), Signal::Cipher(a)) => {
                a.multiply(b).map(Signal::Cipher)
            }
            _ => Err(Error::ShapeMismatch("cannot multiply stacked signals".into())),
        }
    }

    pub fn mul_plain(&self, rhs: &Tensor) -> Result<Signal> {
        match self {
            Signal::Plain(a) => plain_binary(a, rhs, |x, y| x * y).map(Signal::Plain),
            Signal::Cipher(a) => a.multiply(rhs).map(Signal::Cipher),
            Signal::Stack(_) => Err(Error::ShapeMismatch("cannot multiply a stacked signal".into())),
        }
    }

    /// Constant multiple; does not consume a level.
    pub fn scale(&self, k: f64) -> Result<Signal> {
        match self {
            Signal::Plain(a) => Ok(Signal::Plain(a.mapv(|v| v * k))),
            Signal::Cipher(a) => Ok(Signal::Cipher(a.scale_by(k))),
            Signal::Stack(_) => Err(Error::ShapeMismatch("cannot scale a stacked signal".into())),
        }
    }

    pub fn add_scalar(&self, k: f64) -> Result<Signal> {
        match self {
            Signal::Plain(a) => Ok(Signal::Plain(a.mapv(|v| v + k))),
            Signal::Cipher(a) => Ok(Signal::Cipher(a.add_scalar(k))),
            Signal::Stack(_) => Err(Error::ShapeMismatch("cannot shift a stacked signal".into())),
        }
    }
}

/// Same-shape elementwise op; a one-element right operand broadcasts.
fn plain_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if b.len() == 1 {
        let v = b.iter().next().copied().unwrap_or_default();
        return Ok(a.mapv(|x| f(x, v)));
    }
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut out = a.clone();
    out.zip_mut_with(b, |x, &y| *x = f(*x, y));
    Ok(out)
}
