//! Named parameter storage and its binding onto a differentiation graph.

use sha2::{Digest, Sha256};

use super::autodiff::{Gradients, Var};
use super::value::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |&id| self.names[id.0].starts_with(prefix))
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Overwrite values by name. Every stored name must be supplied with a
    /// matching shape.
    pub fn load_named(&mut self, named: &[(String, Tensor)]) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let (_, t) = named
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Malformed(format!("checkpoint lacks parameter `{name}`")))?;
            if t.shape() != self.values[i].shape() {
                return Err(Error::Malformed(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = t.clone();
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and raw bits of the selected parameters.
    pub fn hash(&self, select: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter().filter(|(n, _)| select(n)) {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Bind every parameter as a graph leaf; `trainable` decides which ones
    /// receive gradients.
    pub fn bind(&self, trainable: impl Fn(ParamId) -> bool) -> Bound {
        let vars = self
            .ids()
            .map(|id| {
                let t = self.values[id.0].clone();
                if trainable(id) { Var::param(t) } else { Var::constant(t) }
            })
            .collect();
        Bound { vars }
    }

    /// Bind everything as constants (evaluation).
    pub fn bind_frozen(&self) -> Bound {
        self.bind(|_| false)
    }
}

/// Parameters lifted onto a graph for one forward/backward pass.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    /// Per-parameter gradients in store order (`None` for constants or
    /// parameters the loss does not reach).
    pub fn gradients(&self, grads: &Gradients) -> Vec<Option<Tensor>> {
        self.vars
            .iter()
            .map(|v| (v.requires_grad() && grads.contains(v)).then(|| grads.get(v)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_respects_trainable_mask() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::scalar(2.0));
        let b = s.add("b", Tensor::scalar(3.0));
        let bound = s.bind(|id| id == a);
        let loss = bound.get(a) * bound.get(b);
        let g = bound.gradients(&loss.backward().unwrap());
        assert_eq!(g[a.0].as_ref().unwrap().item(), 3.0);
        assert!(g[b.0].is_none());
    }

    #[test]
    fn hash_changes_with_values() {
        let mut s = ParamStore::new();
        let a = s.add("dec.w", Tensor::scalar(2.0));
        s.add("enc.w", Tensor::scalar(1.0));
        let h0 = s.hash(|n| n.starts_with("dec"));
        s.get_mut(ParamId(1)).data_mut()[0] = 5.0;
        assert_eq!(h0, s.hash(|n| n.starts_with("dec")));
        s.get_mut(a).data_mut()[0] = 5.0;
        assert_ne!(h0, s.hash(|n| n.starts_with("dec")));
    }
}
