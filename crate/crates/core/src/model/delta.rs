use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::tensors::{TensorMap, TensorName};
use crate::model::toy::ToyModel;

/// Elementwise `|a - b|` for every tensor plus grouped means.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDelta {
    pub per_tensor: TensorMap,
    pub heatmap: Heatmap,
}

/// Mean absolute change per (layer, tensor group), with layers split into a
/// shallow first half and a deep second half.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    /// Column labels: adapter codes followed by `base`.
    pub groups: Vec<String>,
    /// `cells[layer][group]`.
    pub cells: Vec<Vec<f64>>,
    /// Layers `0..shallow_layers` count as shallow.
    pub shallow_layers: usize,
    pub shallow: BTreeMap<String, f64>,
    pub deep: BTreeMap<String, f64>,
    /// Embedding and head tensors, keyed by tensor name.
    pub outside_layers: BTreeMap<String, f64>,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    sum: f64,
    n: usize,
}

impl Acc {
    fn add(&mut self, sum: f64, n: usize) {
        self.sum += sum;
        self.n += n;
    }

    fn mean(self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }
}

fn group_label(name: &TensorName) -> Option<String> {
    match name {
        TensorName::Base { .. } => Some("base".into()),
        TensorName::Down { key, .. } | TensorName::Up { key, .. } => Some(key.code()),
        _ => None,
    }
}

pub fn param_delta(a: &ToyModel, b: &ToyModel) -> Result<ParamDelta> {
    if a.config().variant != b.config().variant
        || a.tensor_names() != b.tensor_names()
        || a.config().layers != b.config().layers
    {
        return Err(Error::validation("parameter delta needs identical architectures"));
    }
    let mut per_tensor = TensorMap::new();
    for name in a.tensor_names() {
        let (ta, tb) = (a.tensor(&name).expect("listed"), b.tensor(&name).expect("listed"));
        if ta.shape() != tb.shape() {
            return Err(Error::validation(format!("tensor {name} differs in shape")));
        }
        per_tensor.insert(name, ta.zip_map(tb, "param_delta", |x, y| (x - y).abs())?);
    }

    let mut groups: Vec<String> = a.config().variant.keys().iter().map(|k| k.code()).collect();
    groups.push("base".into());
    let layers = a.config().layers;
    let shallow_layers = layers / 2;
    let mut cells = vec![vec![Acc::default(); groups.len()]; layers];
    let mut shallow: BTreeMap<String, Acc> = BTreeMap::new();
    let mut deep: BTreeMap<String, Acc> = BTreeMap::new();
    let mut outside_layers = BTreeMap::new();
    for (name, d) in per_tensor.iter() {
        let (s, n) = (d.data().iter().sum::<f64>(), d.len());
        match (name.layer(), group_label(name)) {
            (Some(l), Some(g)) => {
                let gi = groups.iter().position(|x| *x == g).expect("group listed");
                cells[l][gi].add(s, n);
                let side = if l < shallow_layers { &mut shallow } else { &mut deep };
                side.entry(g).or_default().add(s, n);
            }
            _ => {
                outside_layers.insert(name.to_string(), d.mean_abs());
            }
        }
    }
    let finish = |m: BTreeMap<String, Acc>| m.into_iter().map(|(k, v)| (k, v.mean())).collect();
    Ok(ParamDelta {
        per_tensor,
        heatmap: Heatmap {
            groups,
            cells: cells
                .into_iter()
                .map(|row| row.into_iter().map(Acc::mean).collect())
                .collect(),
            shallow_layers,
            shallow: finish(shallow),
            deep: finish(deep),
            outside_layers,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::modality::AdapterKey;
    use crate::model::toy::{ModelConfig, Variant};
    use crate::numerics::Matrix;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_per_modality: 4,
            embed_dim: 2,
            hidden_dim: 3,
            total_rank: 4,
            layers: 4,
            max_output_len: 1,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn self_delta_is_zero() {
        let m = ToyModel::new(cfg()).unwrap();
        let d = param_delta(&m, &m).unwrap();
        assert!(d.per_tensor.iter().all(|(_, t)| t.max_abs() == 0.0));
        assert!(d.heatmap.cells.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(d.heatmap.shallow_layers, 2);
    }

    #[test]
    fn single_entry_change() {
        let a = ToyModel::new(cfg()).unwrap();
        let mut b = a.clone();
        let name = TensorName::Up { layer: 3, key: AdapterKey::EI };
        let mut up = Matrix::zeros(3, 1);
        up.set(1, 0, 0.5);
        b.set_tensor(&name, up).unwrap();
        let d = param_delta(&a, &b).unwrap();
        let t = d.per_tensor.get(&name).unwrap();
        assert_eq!(t.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(t.get(1, 0), 0.5);
        let others: f64 = d
            .per_tensor
            .iter()
            .filter(|(n, _)| **n != name)
            .map(|(_, t)| t.sum())
            .sum();
        assert_eq!(others, 0.0);
        // EI in layer 3: down has 1x3 and up 3x1 entries, 0.5 / 6
        assert!((d.heatmap.cells[3][2] - 0.5 / 6.0).abs() < 1e-15);
        assert_eq!(d.heatmap.shallow["EI"], 0.0);
        assert!(d.heatmap.deep["EI"] > 0.0);
    }

    #[test]
    fn architecture_mismatch() {
        let a = ToyModel::new(cfg()).unwrap();
        let b = ToyModel::new(ModelConfig {
            variant: Variant::Single,
            ..cfg()
        })
        .unwrap();
        assert!(matches!(param_delta(&a, &b), Err(Error::Validation(_))));
    }
}
