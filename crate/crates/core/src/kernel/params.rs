use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{DlgfaError, Result};

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Tensor,
    grad: Option<Tensor>,
}

/// Named parameters with one gradient slot each.
///
/// Iteration order is the lexicographic order of the names, which makes every
/// sweep over the store (optimizer updates, serialization, gradient checks)
/// deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(DlgfaError::Contract(format!("duplicate parameter `{name}`")));
        }
        self.slots.insert(name, Slot { value, grad: None });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| DlgfaError::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| DlgfaError::Contract(format!("unknown parameter `{name}`")))
    }

    /// Replaces a parameter value; the new value must keep the old shape.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| DlgfaError::Contract(format!("unknown parameter `{name}`")))?;
        if slot.value.shape() != value.shape() {
            return Err(DlgfaError::dim(
                "ParamStore::set",
                format!("`{name}`: {:?} vs {:?}", slot.value.shape(), value.shape()),
            ));
        }
        slot.value = value;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).and_then(|s| s.grad.as_ref())
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| DlgfaError::Contract(format!("unknown parameter `{name}`")))?;
        if slot.value.shape() != grad.shape() {
            return Err(DlgfaError::dim(
                "ParamStore::set_grad",
                format!("`{name}`: {:?} vs {:?}", slot.value.shape(), grad.shape()),
            ));
        }
        slot.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad = None;
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    /// Mutable access to value and gradient together, for optimizer updates.
    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, Option<&Tensor>)> {
        self.slots
            .iter_mut()
            .map(|(k, s)| (k.as_str(), &mut s.value, s.grad.as_ref()))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.slots.values().map(|s| s.value.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_shapes_fixed() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(store.insert("a", Tensor::zeros(&[2])).is_err());
        assert!(store.set("a", Tensor::zeros(&[3])).is_err());
        assert!(store.set_grad("a", Tensor::zeros(&[3])).is_err());
        store.set_grad("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(store.grad("a").unwrap().data(), &[1.0, 2.0]);
        store.clear_grads();
        assert!(store.grad("a").is_none());
    }
}
