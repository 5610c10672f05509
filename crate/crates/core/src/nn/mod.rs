//! Neural computation nodes usable on plaintext tensors and virtual
//! ciphertexts alike.

pub mod activation;
pub mod cc;
pub mod crypto;
pub mod dense;
pub mod glue;
pub mod loss;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::signal::Signal;
use crate::tensor::Tensor;

/// `param - lr * grad`, elementwise.
pub fn sgd_update(param: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if param.len() != grad.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients",
            param.len(),
            grad.len()
        )));
    }
    param.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
    Ok(())
}

/// `n` draws from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn uniform_init(n: usize, fan_in: usize, seed: u64) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Gradient arriving at a node whose forward output was broadcast: the
/// contributions of all `fan_in` edges are summed.
pub(crate) fn merged_gradient(signal: Signal, fan_in: usize) -> Result<Tensor> {
    if fan_in <= 1 {
        return signal.message();
    }
    let mut items = signal.into_items().into_iter();
    let mut total = items
        .next()
        .ok_or_else(|| Error::State("empty gradient stack".into()))?
        .message()?;
    for item in items {
        let g = item.message()?;
        if g.shape() != total.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {:?} vs {:?}",
                g.shape(),
                total.shape()
            )));
        }
        total += &g;
    }
    Ok(total)
}

pub(crate) fn config_f64(config: &serde_json::Value, key: &str, default: f64) -> f64 {
    config.get(key).and_then(serde_json::Value::as_f64).unwrap_or(default)
}

pub(crate) fn config_u64(config: &serde_json::Value, key: &str, default: u64) -> u64 {
    config.get(key).and_then(serde_json::Value::as_u64).unwrap_or(default)
}

pub(crate) fn config_shape(config: &serde_json::Value, key: &str) -> Result<Vec<usize>> {
    config
        .get(key)
        .and_then(serde_json::Value::as_array)
        .ok_or_else(|| Error::Schema(format!("missing `{key}`")))?
        .iter()
        .map(|v| {
            v.as_u64()
                .map(|d| d as usize)
                .ok_or_else(|| Error::Schema(format!("`{key}` must hold integers")))
        })
        .collect()
}

pub(crate) fn config_values(config: &serde_json::Value, key: &str) -> Option<Vec<f64>> {
    config
        .get(key)?
        .as_array()?
        .iter()
        .map(serde_json::Value::as_f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_steps() {
        let mut w = [1.0];
        sgd_update(&mut w, &[0.5], 0.1).unwrap();
        assert_eq!(w, [0.95]);
        sgd_update(&mut w, &[0.0], 0.1).unwrap();
        assert_eq!(w, [0.95]);
        assert!(sgd_update(&mut w, &[0.0, 1.0], 0.1).is_err());
    }

    #[test]
    fn two_steps_equal_one_summed_step() {
        let (g1, g2, lr) = ([0.25, -1.0], [0.5, 2.0], 0.125);
        let mut a = [1.0, 2.0];
        sgd_update(&mut a, &g1, lr).unwrap();
        sgd_update(&mut a, &g2, lr).unwrap();
        let mut b = [1.0, 2.0];
        sgd_update(&mut b, &[g1[0] + g2[0], g1[1] + g2[1]], lr).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let w = uniform_init(100, 4, 3);
        assert!(w.iter().all(|v| v.abs() <= 0.5));
        assert_eq!(w, uniform_init(100, 4, 3));
        assert_ne!(w, uniform_init(100, 4, 4));
    }
}
