use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::modality::{AdapterKey, Modality};
use crate::numerics::Matrix;

/// Stable name of one parameter tensor of a [`ToyModel`](super::ToyModel).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TensorName {
    Embedding(Modality),
    Base { layer: usize },
    Down { layer: usize, key: AdapterKey },
    Up { layer: usize, key: AdapterKey },
    Head { modality: Modality, position: usize },
}

impl TensorName {
    pub fn layer(&self) -> Option<usize> {
        match *self {
            TensorName::Base { layer } | TensorName::Down { layer, .. } | TensorName::Up { layer, .. } => {
                Some(layer)
            }
            _ => None,
        }
    }

    pub fn adapter_key(&self) -> Option<AdapterKey> {
        match *self {
            TensorName::Down { key, .. } | TensorName::Up { key, .. } => Some(key),
            _ => None,
        }
    }
}

impl fmt::Display for TensorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorName::Embedding(m) => write!(f, "embed.{m}"),
            TensorName::Base { layer } => write!(f, "layer{layer}.base"),
            TensorName::Down { layer, key } => write!(f, "layer{layer}.{key}.down"),
            TensorName::Up { layer, key } => write!(f, "layer{layer}.{key}.up"),
            TensorName::Head { modality, position } => write!(f, "head.{modality}.{position}"),
        }
    }
}

impl FromStr for TensorName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::validation(format!("bad tensor name {s:?}"));
        let parts: Vec<&str> = s.split('.').collect();
        let layer_of = |p: &str| -> Result<usize> {
            p.strip_prefix("layer")
                .and_then(|n| n.parse().ok())
                .ok_or_else(bad)
        };
        match parts.as_slice() {
            ["embed", m] => Ok(TensorName::Embedding(m.parse()?)),
            ["head", m, p] => Ok(TensorName::Head {
                modality: m.parse()?,
                position: p.parse().map_err(|_| bad())?,
            }),
            [l, "base"] => Ok(TensorName::Base { layer: layer_of(l)? }),
            [l, k, "down"] => Ok(TensorName::Down {
                layer: layer_of(l)?,
                key: k.parse()?,
            }),
            [l, k, "up"] => Ok(TensorName::Up {
                layer: layer_of(l)?,
                key: k.parse()?,
            }),
            _ => Err(bad()),
        }
    }
}

/// Ordered collection of named matrices (parameters, gradients, Fisher
/// estimates, shadow weights).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorMap(BTreeMap<TensorName, Matrix>);

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: TensorName, m: Matrix) -> Option<Matrix> {
        self.0.insert(name, m)
    }

    pub fn get(&self, name: &TensorName) -> Option<&Matrix> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &TensorName) -> Option<&mut Matrix> {
        self.0.get_mut(name)
    }

    pub fn remove(&mut self, name: &TensorName) -> Option<Matrix> {
        self.0.remove(name)
    }

    pub fn contains(&self, name: &TensorName) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &TensorName> {
        self.0.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TensorName, &Matrix)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&TensorName, &mut Matrix)> {
        self.0.iter_mut()
    }

    /// `self[name] += factor * other[name]`, inserting a scaled copy when
    /// `self` has no entry yet.
    pub fn add_scaled(&mut self, other: &TensorMap, factor: f64) -> Result<()> {
        for (name, m) in &other.0 {
            match self.0.get_mut(name) {
                Some(acc) => acc.axpy(factor, m)?,
                None => {
                    self.0.insert(*name, m.scale(factor));
                }
            }
        }
        Ok(())
    }

    pub fn scale_all(&mut self, factor: f64) {
        for m in self.0.values_mut() {
            *m = m.scale(factor);
        }
    }

    /// Flattened values in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.values().flat_map(|m| m.data().iter().copied()).collect()
    }

    pub fn total_len(&self) -> usize {
        self.0.values().map(Matrix::len).sum()
    }

    pub fn first_non_finite(&self) -> Option<TensorName> {
        self.0
            .iter()
            .find(|(_, m)| !m.is_finite())
            .map(|(n, _)| *n)
    }
}

impl FromIterator<(TensorName, Matrix)> for TensorMap {
    fn from_iter<I: IntoIterator<Item = (TensorName, Matrix)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl IntoIterator for TensorMap {
    type Item = (TensorName, Matrix);
    type IntoIter = std::collections::btree_map::IntoIter<TensorName, Matrix>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}
