use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named model parameters plus the set of names an optimizer may touch.
///
/// Names are dotted paths such as `layer.3.attn.w_q`. Iteration order is the
/// lexicographic order of names, which fixes the order of every reduction
/// that walks the store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    trainable: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub trainable: usize,
    pub frozen: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.trainable + self.frozen
    }

    pub fn trainable_fraction(&self) -> f64 {
        self.trainable as f64 / self.total().max(1) as f64
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new parameter; it starts out trainable.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        self.params.insert(name.to_string(), value);
        self.trainable.insert(name.to_string());
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.trainable.remove(name);
        self.params.remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.contains(name)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &String> {
        self.trainable.iter()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        if !self.params.contains_key(name) {
            return Err(Error::UnknownParameter(name.to_string()));
        }
        if trainable {
            self.trainable.insert(name.to_string());
        } else {
            self.trainable.remove(name);
        }
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        self.trainable.clear();
    }

    pub fn unfreeze_all(&mut self) {
        self.trainable = self.params.keys().cloned().collect();
    }

    /// Replace the trainable mask with exactly the names accepted by `pred`.
    pub fn set_mask_by<F: Fn(&str) -> bool>(&mut self, pred: F) {
        self.trainable = self.params.keys().filter(|n| pred(n)).cloned().collect();
    }

    pub fn counts(&self) -> ParamCounts {
        let mut c = ParamCounts { trainable: 0, frozen: 0 };
        for (name, t) in &self.params {
            if self.trainable.contains(name) {
                c.trainable += t.len();
            } else {
                c.frozen += t.len();
            }
        }
        c
    }

    /// Sum of element counts over names with the given prefix.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.len()).sum()
    }

    pub fn round_to_f32(&mut self) {
        for t in self.params.values_mut() {
            t.round_to_f32();
        }
    }

    /// Names whose values differ (bitwise) from `other`'s.
    pub fn changed_names(&self, other: &ParamStore) -> Vec<String> {
        self.params
            .iter()
            .filter(|(n, t)| match other.params.get(*n) {
                Some(o) => {
                    o.shape() != t.shape()
                        || o.data().iter().zip(t.data()).any(|(a, b)| a.to_bits() != b.to_bits())
                }
                None => true,
            })
            .map(|(n, _)| n.clone())
            .collect()
    }
}
