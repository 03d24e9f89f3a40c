use std::collections::BTreeMap;

use super::{Graph, Tensor};
use crate::error::{Error, Result};

/// Named parameters, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a new parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    /// Replaces an existing parameter's value.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        match self.tensors.get_mut(name) {
            Some(slot) => {
                if slot.shape() != t.shape() {
                    return Err(Error::dim(
                        "param_set",
                        format!("`{name}` has shape {:?}, got {:?}", slot.shape(), t.shape()),
                    ));
                }
                *slot = t;
                Ok(())
            }
            None => Err(Error::Lookup(format!("no parameter named `{name}`"))),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("no parameter named `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Copy with every tensor registered as a leaf of `graph`.
    pub fn attach(&self, graph: &Graph) -> ParamStore {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), graph.leaf(v))).collect(),
        }
    }

    pub fn detach(&self) -> ParamStore {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.detach())).collect(),
        }
    }

    /// Sub-store of the parameters whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Inserts or overwrites every entry of `other`.
    pub fn merge(&mut self, other: &ParamStore) {
        for (k, v) in &other.tensors {
            self.tensors.insert(k.clone(), v.clone());
        }
    }

    /// Exact equality of names, shapes and value bits.
    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.bit_eq(b))
    }
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamStore {
            tensors: iter.into_iter().collect(),
        }
    }
}

/// Central-difference gradient of `f` at `params`, one scalar entry at a time.
///
/// `f` must be deterministic in `params`; callers pin any randomness.
pub fn finite_difference_grad<F>(mut f: F, params: &ParamStore, eps: f64) -> Result<ParamStore>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("finite difference step must be positive, got {eps}")));
    }
    let mut eval = |p: &ParamStore| -> Result<f64> {
        let v = f(p)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("finite-difference objective returned {v}")))
        }
    };
    let base = params.detach();
    let mut out = ParamStore::new();
    for (name, t) in base.iter() {
        let mut grad = vec![0.0; t.numel()];
        for (i, slot) in grad.iter_mut().enumerate() {
            let bump = |delta: f64| -> Result<ParamStore> {
                let mut data = t.to_vec();
                data[i] += delta;
                let mut p = base.clone();
                p.set(name, Tensor::new(t.shape(), data)?)?;
                Ok(p)
            };
            let plus = eval(&bump(eps)?)?;
            let minus = eval(&bump(-eps)?)?;
            *slot = (plus - minus) / (2.0 * eps);
        }
        out.insert(name, Tensor::new(t.shape(), grad)?)?;
    }
    Ok(out)
}
