//! Named learnable arrays with gradients and optimizer moments.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HudError, Result};
use crate::tensor::Tensor2D;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor2D,
    pub grad: Tensor2D,
    /// Adam first moment.
    pub m: Tensor2D,
    /// Adam second moment.
    pub v: Tensor2D,
    /// Frozen parameters take part in the forward pass but are never updated.
    pub frozen: bool,
}

impl Param {
    fn new(value: Tensor2D) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Tensor2D::zeros(r, c),
            m: Tensor2D::zeros(r, c),
            v: Tensor2D::zeros(r, c),
            frozen: false,
        }
    }
}

/// Ordered map of parameters. Iteration order is lexicographic by name, which
/// fixes the byte layout of checkpoints and the order of gradient checks.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParameterStore {
    entries: BTreeMap<String, Param>,
    pub step: u64,
    pub seed: u64,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        Self {
            entries: BTreeMap::new(),
            step: 0,
            seed,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2D) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(HudError::DuplicateParameter(name));
        }
        self.entries.insert(name, Param::new(value));
        Ok(())
    }

    /// Inserts a full entry, including optimizer state. Used when restoring.
    pub fn insert_param(&mut self, name: impl Into<String>, param: Param) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(HudError::DuplicateParameter(name));
        }
        let shape = param.value.shape();
        for t in [&param.grad, &param.m, &param.v] {
            if t.shape() != shape {
                return Err(HudError::shape(
                    "insert_param",
                    format!("{name}: state shape {:?} vs value {shape:?}", t.shape()),
                ));
            }
        }
        self.entries.insert(name, param);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| HudError::UnknownParameter(name.to_owned()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| HudError::UnknownParameter(name.to_owned()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2D> {
        Ok(&self.get(name)?.value)
    }

    /// Replaces a parameter value, keeping its shape.
    pub fn set_value(&mut self, name: &str, value: Tensor2D) -> Result<()> {
        let p = self.get_mut(name)?;
        p.value.expect_same_shape(&value, "set_value")?;
        p.value = value;
        Ok(())
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.get_mut(name)?.frozen = frozen;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor2D> {
        Ok(&self.get(name)?.grad)
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor2D) -> Result<()> {
        self.get_mut(name)?.grad.add_assign(grad)
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Checks that `self` has exactly the names and shapes of `reference`.
    pub fn check_layout(&self, reference: &ParameterStore) -> Result<()> {
        for (name, p) in &reference.entries {
            let mine = self.get(name)?;
            if mine.value.shape() != p.value.shape() {
                return Err(HudError::shape(
                    "check_layout",
                    format!(
                        "parameter `{name}` has shape {:?}, expected {:?}",
                        mine.value.shape(),
                        p.value.shape()
                    ),
                ));
            }
        }
        if let Some(extra) = self.names().find(|n| !reference.contains(n)) {
            return Err(HudError::UnknownParameter(extra.to_owned()));
        }
        Ok(())
    }
}

/// Deterministic initializers keyed by the store seed and the parameter name,
/// so adding a parameter never changes the initial values of the others.
pub struct Initializer {
    seed: u64,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng_for(&self, name: &str) -> ChaCha8Rng {
        // FNV-1a over the name, mixed with the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        ChaCha8Rng::seed_from_u64(self.seed ^ h)
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))` scaled by `gain`.
    pub fn xavier(&self, name: &str, rows: usize, cols: usize, gain: f64) -> Tensor2D {
        let bound = gain * (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(name, rows, cols, bound)
    }

    pub fn uniform(&self, name: &str, rows: usize, cols: usize, bound: f64) -> Tensor2D {
        let mut rng = self.rng_for(name);
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor2D::new(rows, cols, data).expect("length matches by construction")
    }
}
