//! Levelled virtual ciphertexts with RNS-CKKS interaction rules.
//!
//! Nothing here is encrypted. A [`VirtualCiphertext`] carries the decoded
//! message in the clear together with the bookkeeping a real CKKS ciphertext
//! would impose on a program: a finite modulus chain consumed one prime per
//! product, automatic mod-switching of the deeper operand, key and parameter
//! compatibility, and relinearisation after ciphertext products.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::IxDyn;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// MS-SEAL scheme tag for CKKS.
pub const SCHEME_CKKS: u8 = 2;

/// Encryption parameters for one group of interacting ciphertexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkksParams {
    pub scheme: u8,
    pub scale: f64,
    pub coeff_mod_bits: Vec<u32>,
    pub poly_modulus_degree: usize,
}

impl CkksParams {
    /// Number of packed slots, `poly_modulus_degree / 2`.
    pub fn slot_capacity(&self) -> usize {
        self.poly_modulus_degree / 2
    }

    /// Multiplications available before the chain is down to its two
    /// special primes.
    pub fn usable_levels(&self) -> usize {
        self.coeff_mod_bits.len().saturating_sub(2)
    }

    pub fn id(&self) -> ParamsId {
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        self.scheme.hash(&mut hasher);
        self.scale.to_bits().hash(&mut hasher);
        self.coeff_mod_bits.hash(&mut hasher);
        self.poly_modulus_degree.hash(&mut hasher);
        ParamsId(hasher.finish())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KeyId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamsId(pub u64);

static NEXT_KEY: AtomicU64 = AtomicU64::new(1);

/// Per-product relative perturbation, for robustness testing only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub eta: f64,
    pub seed: u64,
}

/// Stand-in for a secret/public key pair bound to one parameter set.
#[derive(Debug, Clone)]
pub struct KeyPair {
    key_id: KeyId,
    params: Arc<CkksParams>,
    params_id: ParamsId,
    noise: Option<NoiseModel>,
}

impl KeyPair {
    pub fn generate(params: CkksParams) -> KeyPair {
        let params_id = params.id();
        KeyPair {
            key_id: KeyId(NEXT_KEY.fetch_add(1, Ordering::Relaxed)),
            params: Arc::new(params),
            params_id,
            noise: None,
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> KeyPair {
        self.noise = Some(noise);
        self
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn params(&self) -> &CkksParams {
        &self.params
    }

    pub fn params_id(&self) -> ParamsId {
        self.params_id
    }
}

/// All keys known to the data owner, looked up by id when a ciphertext
/// has to be decrypted or re-encrypted.
#[derive(Debug, Clone, Default)]
pub struct Keyring {
    keys: HashMap<KeyId, KeyPair>,
}

impl Keyring {
    pub fn new() -> Keyring {
        Keyring::default()
    }

    pub fn insert(&mut self, key: KeyPair) {
        self.keys.insert(key.key_id, key);
    }

    pub fn get(&self, id: KeyId) -> Result<&KeyPair> {
        self.keys.get(&id).ok_or(Error::KeyMismatch)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct NoiseState {
    eta: f64,
    state: u64,
}

/// The simulated CKKS meta-object. Values are immutable; every operation
/// returns a new ciphertext.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualCiphertext {
    slots: Vec<f64>,
    shape: Vec<usize>,
    capacity: usize,
    scale: f64,
    chain: Vec<u32>,
    original_len: usize,
    key_id: KeyId,
    params_id: ParamsId,
    relinearised: bool,
    noise: Option<NoiseState>,
}

/// Right-hand side of a binary ciphertext operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Cipher(&'a VirtualCiphertext),
    Plain(&'a Tensor),
}

impl<'a> From<&'a VirtualCiphertext> for Operand<'a> {
    fn from(ct: &'a VirtualCiphertext) -> Self {
        Operand::Cipher(ct)
    }
}

impl<'a> From<&'a Tensor> for Operand<'a> {
    fn from(t: &'a Tensor) -> Self {
        Operand::Plain(t)
    }
}

/// How a key rotation reshapes its ciphertext.
#[derive(Debug, Clone, PartialEq)]
pub enum RotateMode {
    /// Fresh ciphertext, same slots.
    Whole,
    /// One fresh ciphertext per slot range.
    Split(Vec<Range<usize>>),
    /// A single-slot ciphertext holding the sum of all slots.
    Sum,
}

pub fn encrypt(x: &Tensor, kp: &KeyPair) -> Result<VirtualCiphertext> {
    let capacity = kp.params.slot_capacity();
    if x.len() > capacity {
        return Err(Error::Capacity {
            len: x.len(),
            capacity,
        });
    }
    if kp.params.coeff_mod_bits.len() < 2 {
        return Err(Error::Domain(
            "coefficient modulus chain needs both special primes".into(),
        ));
    }
    Ok(VirtualCiphertext {
        slots: x.iter().copied().collect(),
        shape: x.shape().to_vec(),
        capacity,
        scale: kp.params.scale,
        chain: kp.params.coeff_mod_bits.clone(),
        original_len: kp.params.coeff_mod_bits.len(),
        key_id: kp.key_id,
        params_id: kp.params_id,
        relinearised: false,
        noise: kp.noise.map(|n| NoiseState {
            eta: n.eta,
            state: n.seed,
        }),
    })
}

pub fn decrypt(ct: &VirtualCiphertext, kp: &KeyPair) -> Result<Tensor> {
    if ct.key_id != kp.key_id {
        return Err(Error::KeyMismatch);
    }
    Ok(ct.message())
}

/// Decrypt under `old` and re-encrypt under `new`, optionally reshaping.
pub fn rotate(
    ct: &VirtualCiphertext,
    old: &KeyPair,
    new: &KeyPair,
    mode: &RotateMode,
) -> Result<Vec<VirtualCiphertext>> {
    let plain = decrypt(ct, old)?;
    let values = plain.as_slice().expect("message tensors are contiguous");
    match mode {
        RotateMode::Whole => Ok(vec![encrypt(&plain, new)?]),
        RotateMode::Sum => Ok(vec![encrypt(&tensor::scalar(tensor::slot_sum(values)), new)?]),
        RotateMode::Split(segments) => segments
            .iter()
            .map(|seg| {
                if seg.start > seg.end || seg.end > values.len() {
                    return Err(Error::Slice {
                        start: seg.start,
                        end: seg.end,
                        len: values.len(),
                    });
                }
                encrypt(&tensor::vector(values[seg.clone()].to_vec()), new)
            })
            .collect(),
    }
}

impl VirtualCiphertext {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Remaining coefficient modulus bit sizes.
    pub fn chain(&self) -> &[u32] {
        &self.chain
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn params_id(&self) -> ParamsId {
        self.params_id
    }

    pub fn relinearised(&self) -> bool {
        self.relinearised
    }

    /// Multiplicative depth consumed so far.
    pub fn mult_count(&self) -> usize {
        self.original_len - self.chain.len()
    }

    pub fn remaining_levels(&self) -> usize {
        self.chain.len().saturating_sub(2)
    }

    /// The message as the data owner would see it after decryption. The
    /// simulation plays both parties, so gradient code may read it directly.
    pub fn message(&self) -> Tensor {
        Tensor::from_shape_vec(IxDyn(&self.shape), self.slots.clone())
            .expect("slot count matches shape")
    }

    pub fn slots(&self) -> &[f64] {
        &self.slots
    }

    /// Drop primes until only `len` remain.
    fn switch_down(&mut self, len: usize) {
        while self.chain.len() > len {
            self.chain.remove(self.chain.len() - 2);
        }
    }

    fn check_compatible(&self, other: &VirtualCiphertext) -> Result<()> {
        if self.key_id != other.key_id {
            return Err(Error::KeyMismatch);
        }
        if self.params_id != other.params_id {
            return Err(Error::ParamsMismatch);
        }
        Ok(())
    }

    /// Bring both operands to the same point on the modulus chain.
    fn matched(&self, other: &VirtualCiphertext) -> Result<(VirtualCiphertext, VirtualCiphertext)> {
        self.check_compatible(other)?;
        let len = self.chain.len().min(other.chain.len());
        let mut a = self.clone();
        let mut b = other.clone();
        a.switch_down(len);
        b.switch_down(len);
        Ok((a, b))
    }

    fn binary_slots(
        &self,
        other: &[f64],
        other_shape: &[usize],
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Vec<f64>> {
        if other.len() == 1 {
            let v = other[0];
            return Ok(self.slots.iter().map(|&a| f(a, v)).collect());
        }
        if other_shape != self.shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other_shape
            )));
        }
        Ok(self.slots.iter().zip(other).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn add<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<VirtualCiphertext> {
        match rhs.into() {
            Operand::Cipher(other) => {
                let (mut a, b) = self.matched(other)?;
                a.slots = a.binary_slots(&b.slots, &b.shape, |x, y| x + y)?;
                Ok(a)
            }
            Operand::Plain(t) => {
                let mut a = self.clone();
                let values = tensor::values(t);
                a.slots = self.binary_slots(&values, t.shape(), |x, y| x + y)?;
                Ok(a)
            }
        }
    }

    /// Elementwise product followed by rescale: consumes one prime.
    pub fn multiply<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<VirtualCiphertext> {
        let mut out = match rhs.into() {
            Operand::Cipher(other) => {
                let (mut a, b) = self.matched(other)?;
                a.require_level()?;
                a.slots = a.binary_slots(&b.slots, &b.shape, |x, y| x * y)?;
                a.relinearised = true;
                if let (Some(na), Some(nb)) = (a.noise, b.noise) {
                    a.noise = Some(NoiseState {
                        eta: na.eta.max(nb.eta),
                        state: na.state ^ nb.state.rotate_left(17),
                    });
                }
                a
            }
            Operand::Plain(t) => {
                let mut a = self.clone();
                a.require_level()?;
                let values = tensor::values(t);
                a.slots = self.binary_slots(&values, t.shape(), |x, y| x * y)?;
                a
            }
        };
        out.switch_down(out.chain.len() - 1);
        out.perturb();
        Ok(out)
    }

    /// Multiplication by a constant folded into the encoding; depth-free.
    pub fn scale_by(&self, k: f64) -> VirtualCiphertext {
        let mut out = self.clone();
        out.slots.iter_mut().for_each(|v| *v *= k);
        out
    }

    pub fn add_scalar(&self, k: f64) -> VirtualCiphertext {
        let mut out = self.clone();
        out.slots.iter_mut().for_each(|v| *v += k);
        out
    }

    fn require_level(&self) -> Result<()> {
        if self.remaining_levels() == 0 {
            return Err(Error::LevelExhausted {
                depth: self.mult_count(),
            });
        }
        Ok(())
    }

    fn perturb(&mut self) {
        if let Some(noise) = self.noise.as_mut() {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.state);
            for v in &mut self.slots {
                *v *= 1.0 + noise.eta * rng.gen_range(-1.0..=1.0);
            }
            noise.state = rng.next_u64();
        }
    }
}
