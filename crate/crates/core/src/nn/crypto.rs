//! Encryption boundary nodes. Until a key is attached they pass plaintext
//! straight through, which is how a graph runs on unencrypted data.

use std::sync::Arc;

use serde_json::{json, Value};

use super::merged_gradient;
use crate::ckks::{decrypt, encrypt, rotate, KeyPair, Keyring, RotateMode};
use crate::error::{Error, Result};
use crate::firing::{BACKWARD, FORWARD};
use crate::graph::{Category, ComputationNode, Fan};
use crate::signal::{NodeOutput, Signal};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone)]
struct Keys {
    own: KeyPair,
    ring: Arc<Keyring>,
}

#[derive(Debug, Clone, Default)]
pub struct Encrypt {
    keys: Option<Keys>,
}

impl Encrypt {
    pub fn key(&self) -> Option<&KeyPair> {
        self.keys.as_ref().map(|k| &k.own)
    }
}

impl ComputationNode for Encrypt {
    fn kind(&self) -> &'static str {
        "Encrypt"
    }

    fn category(&self) -> Category {
        Category::Encryption
    }

    fn receptor(&mut self, name: &str, signal: Signal, fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => Ok(NodeOutput::Broadcast(match (&self.keys, signal) {
                (Some(keys), Signal::Plain(t)) => Signal::Cipher(encrypt(&t, &keys.own)?),
                (Some(_), Signal::Stack(_)) => {
                    return Err(Error::Arity("encrypt takes a single tensor".into()))
                }
                (_, other) => other,
            })),
            BACKWARD => Ok(NodeOutput::Broadcast(Signal::Plain(merged_gradient(signal, fan.inputs)?))),
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({})
    }

    fn attach_key(&mut self, key: &KeyPair, keyring: &Arc<Keyring>) {
        self.keys = Some(Keys {
            own: key.clone(),
            ring: keyring.clone(),
        });
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}

/// Re-keys a ciphertext onto this node's parameter group. In `sum` mode the
/// fresh ciphertext holds the sum of the input's slots.
#[derive(Debug, Clone)]
pub struct Rotate {
    sum: bool,
    keys: Option<Keys>,
    shape: Option<Vec<usize>>,
}

impl Default for Rotate {
    fn default() -> Self {
        Rotate {
            sum: true,
            keys: None,
            shape: None,
        }
    }
}

impl Rotate {
    pub fn whole() -> Self {
        Rotate {
            sum: false,
            ..Self::default()
        }
    }

    pub fn from_config(config: &Value) -> Result<Self> {
        match config.get("mode").and_then(Value::as_str).unwrap_or("sum") {
            "sum" => Ok(Self::default()),
            "whole" => Ok(Self::whole()),
            other => Err(Error::Schema(format!("unknown rotation mode `{other}`"))),
        }
    }

    fn mode(&self) -> RotateMode {
        if self.sum {
            RotateMode::Sum
        } else {
            RotateMode::Whole
        }
    }
}

impl ComputationNode for Rotate {
    fn kind(&self) -> &'static str {
        "Rotate"
    }

    fn category(&self) -> Category {
        Category::Encryption
    }

    fn receptor(&mut self, name: &str, signal: Signal, fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                self.shape = Some(signal.shape()?);
                let out = match (&self.keys, signal) {
                    (Some(keys), Signal::Cipher(ct)) => {
                        let old = keys.ring.get(ct.key_id())?;
                        let mut fresh = rotate(&ct, old, &keys.own, &self.mode())?;
                        Signal::Cipher(fresh.pop().expect("one ciphertext per rotation"))
                    }
                    (_, Signal::Plain(t)) if self.sum => Signal::scalar(tensor::sum(&t)),
                    (_, other) => other,
                };
                Ok(NodeOutput::Broadcast(out))
            }
            BACKWARD => {
                let grad = merged_gradient(signal, fan.inputs)?;
                let shape = self
                    .shape
                    .as_ref()
                    .ok_or_else(|| Error::State("rotate backward before forward".into()))?;
                let dx = if self.sum {
                    let g = tensor::sum(&grad);
                    Tensor::from_elem(shape.as_slice(), g)
                } else {
                    grad
                };
                Ok(NodeOutput::Broadcast(Signal::Plain(dx)))
            }
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({ "mode": if self.sum { "sum" } else { "whole" } })
    }

    fn attach_key(&mut self, key: &KeyPair, keyring: &Arc<Keyring>) {
        self.keys = Some(Keys {
            own: key.clone(),
            ring: keyring.clone(),
        });
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}

/// Decrypts every incoming item with the key it was encrypted under and
/// concatenates the results into one plaintext vector.
#[derive(Debug, Clone, Default)]
pub struct Decrypt {
    keys: Option<Keys>,
    shapes: Vec<Vec<usize>>,
    stacked: bool,
}

impl Decrypt {
    fn open(&self, item: &Signal) -> Result<Tensor> {
        match (item, &self.keys) {
            (Signal::Cipher(ct), Some(keys)) => decrypt(ct, keys.ring.get(ct.key_id())?),
            (Signal::Cipher(_), None) => Err(Error::KeyMismatch),
            (Signal::Plain(t), _) => Ok(t.clone()),
            (Signal::Stack(_), _) => Err(Error::Arity("nested stacks cannot be decrypted".into())),
        }
    }
}

impl ComputationNode for Decrypt {
    fn kind(&self) -> &'static str {
        "Decrypt"
    }

    fn category(&self) -> Category {
        Category::Encryption
    }

    fn receptor(&mut self, name: &str, signal: Signal, fan: Fan) -> Result<NodeOutput> {
        match name {
            FORWARD => {
                self.stacked = matches!(signal, Signal::Stack(_));
                let items = signal.into_items();
                let mut values = Vec::new();
                self.shapes.clear();
                for item in &items {
                    let t = self.open(item)?;
                    self.shapes.push(t.shape().to_vec());
                    values.extend(tensor::values(&t));
                }
                Ok(NodeOutput::Broadcast(Signal::Plain(tensor::vector(values))))
            }
            BACKWARD => {
                if self.shapes.is_empty() {
                    return Err(Error::State("decrypt backward before forward".into()));
                }
                let grad = tensor::values(&merged_gradient(signal, fan.inputs)?);
                let total: usize = self.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
                if grad.len() != total {
                    return Err(Error::ShapeMismatch(format!(
                        "gradient of {} values for {} decrypted slots",
                        grad.len(),
                        total
                    )));
                }
                let mut offset = 0;
                let mut parts = Vec::with_capacity(self.shapes.len());
                for shape in &self.shapes {
                    let n: usize = shape.iter().product();
                    let part = tensor::from_shape(shape, grad[offset..offset + n].to_vec())
                        .ok_or_else(|| Error::Shape(format!("bad gradient shape {shape:?}")))?;
                    parts.push(Signal::Plain(part));
                    offset += n;
                }
                Ok(if fan.outputs > 1 {
                    NodeOutput::Generated(parts)
                } else if self.stacked {
                    NodeOutput::Broadcast(Signal::Stack(parts))
                } else {
                    NodeOutput::Broadcast(parts.pop().expect("one part"))
                })
            }
            _ => Ok(NodeOutput::Nothing),
        }
    }

    fn config(&self) -> Value {
        json!({})
    }

    fn attach_key(&mut self, key: &KeyPair, keyring: &Arc<Keyring>) {
        self.keys = Some(Keys {
            own: key.clone(),
            ring: keyring.clone(),
        });
    }

    fn clone_box(&self) -> Box<dyn ComputationNode> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autofhe::parameterise;

    fn ring(keys: &[&KeyPair]) -> Arc<Keyring> {
        let mut ring = Keyring::new();
        for k in keys {
            ring.insert((*k).clone());
        }
        Arc::new(ring)
    }

    #[test]
    fn encrypt_rotate_decrypt_round_trip() {
        let a = KeyPair::generate(parameterise(2, 40, 1.5).unwrap());
        let b = KeyPair::generate(parameterise(1, 40, 1.5).unwrap());
        let ring = ring(&[&a, &b]);
        let mut enc = Encrypt::default();
        enc.attach_key(&a, &ring);
        let mut rot = Rotate::default();
        rot.attach_key(&b, &ring);
        let mut dec = Decrypt::default();
        dec.attach_key(&b, &ring);

        let x = Signal::Plain(tensor::vector(vec![1.0, 2.0, 3.0]));
        let NodeOutput::Broadcast(ct) = enc.receptor(FORWARD, x, Fan::default()).unwrap() else {
            panic!()
        };
        assert!(ct.is_cipher());
        let NodeOutput::Broadcast(r) = rot.receptor(FORWARD, ct, Fan::default()).unwrap() else {
            panic!()
        };
        match &r {
            Signal::Cipher(c) => assert_eq!(c.key_id(), b.key_id()),
            _ => panic!("expected a ciphertext"),
        }
        let out = dec.receptor(FORWARD, Signal::Stack(vec![r.clone(), r]), Fan::default()).unwrap();
        assert_eq!(out, NodeOutput::Broadcast(Signal::Plain(tensor::vector(vec![6.0, 6.0]))));
    }

    #[test]
    fn plaintext_passes_through_without_keys() {
        let x = Signal::Plain(tensor::vector(vec![1.0, 2.0]));
        let out = Encrypt::default().receptor(FORWARD, x.clone(), Fan::default()).unwrap();
        assert_eq!(out, NodeOutput::Broadcast(x.clone()));
        let out = Rotate::default().receptor(FORWARD, x, Fan::default()).unwrap();
        assert_eq!(out, NodeOutput::Broadcast(Signal::scalar(3.0)));
    }

    #[test]
    fn decrypt_needs_a_known_key() {
        let a = KeyPair::generate(parameterise(1, 40, 1.5).unwrap());
        let ct = Signal::Cipher(encrypt(&tensor::scalar(1.0), &a).unwrap());
        let mut dec = Decrypt::default();
        assert_eq!(dec.receptor(FORWARD, ct.clone(), Fan::default()), Err(Error::KeyMismatch));
        let other = KeyPair::generate(parameterise(1, 40, 1.5).unwrap());
        dec.attach_key(&other, &ring(&[&other]));
        assert_eq!(dec.receptor(FORWARD, ct, Fan::default()), Err(Error::KeyMismatch));
    }

    #[test]
    fn gradients_split_and_broadcast() {
        let mut dec = Decrypt::default();
        let items = Signal::Stack(vec![Signal::scalar(1.0), Signal::scalar(2.0)]);
        dec.receptor(FORWARD, items, Fan { inputs: 2, outputs: 1 }).unwrap();
        let grad = Signal::Plain(tensor::vector(vec![0.5, -0.5]));
        assert_eq!(
            dec.receptor(BACKWARD, grad, Fan { inputs: 1, outputs: 2 }).unwrap(),
            NodeOutput::Generated(vec![Signal::scalar(0.5), Signal::scalar(-0.5)])
        );

        let mut rot = Rotate::default();
        rot.receptor(FORWARD, Signal::Plain(tensor::vector(vec![1.0, 2.0])), Fan::default())
            .unwrap();
        assert_eq!(
            rot.receptor(BACKWARD, Signal::scalar(3.0), Fan::default()).unwrap(),
            NodeOutput::Broadcast(Signal::Plain(tensor::vector(vec![3.0, 3.0])))
        );
    }
}
