//! Computational graphs that fire on plaintext tensors or simulated CKKS
//! ciphertexts, with automatic grouping and parameterisation of the
//! encryption parameters each part of the graph needs.

pub mod autofhe;
pub mod ckks;
pub mod document;
pub mod dot;
pub mod error;
pub mod firing;
pub mod graph;
pub mod harness;
pub mod nn;
pub mod signal;
pub mod tensor;
mod union_find;

pub use autofhe::{auto_he, parameterise, ConcernPredicate, ParamGroups};
pub use ckks::{CkksParams, KeyPair, Keyring, VirtualCiphertext};
pub use error::{Error, Result};
pub use firing::{fire, BACKWARD, FORWARD};
pub use graph::{Category, ComputationNode, ComputationalGraph, Fan};
pub use signal::{NodeOutput, Signal};
pub use tensor::Tensor;
