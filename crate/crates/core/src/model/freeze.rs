use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::modality::{AdapterKey, Modality, Signature};
use crate::model::tensors::TensorName;
use crate::model::toy::Variant;

/// Which tensors a task may update.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    #[serde(with = "adapter_map")]
    pub adapters: BTreeMap<AdapterKey, bool>,
    pub embeddings: bool,
    pub heads: bool,
}

impl FreezeMask {
    pub fn is_trainable(&self, name: &TensorName) -> bool {
        match name {
            TensorName::Embedding(_) => self.embeddings,
            TensorName::Head { .. } => self.heads,
            TensorName::Base { .. } => false,
            TensorName::Down { key, .. } | TensorName::Up { key, .. } => {
                self.adapters.get(key).copied().unwrap_or(false)
            }
        }
    }

    pub fn trainable_adapters(&self) -> BTreeSet<AdapterKey> {
        self.adapters
            .iter()
            .filter(|(_, &t)| t)
            .map(|(&k, _)| k)
            .collect()
    }

    pub fn frozen_adapters(&self) -> BTreeSet<AdapterKey> {
        self.adapters
            .iter()
            .filter(|(_, &t)| !t)
            .map(|(&k, _)| k)
            .collect()
    }
}

/// Four-way split rule: train the General adapter of every input modality
/// and the Expert adapter of the output modality; freeze the rest.
/// Embeddings and heads always train.
pub fn derive_freeze_mask(inputs: &BTreeSet<Modality>, output: Modality) -> Result<FreezeMask> {
    if inputs.is_empty() {
        return Err(Error::validation("freeze mask needs a nonempty input set"));
    }
    let adapters = AdapterKey::FOUR
        .iter()
        .map(|&k| {
            let trainable = match k {
                AdapterKey::General(m) => inputs.contains(&m),
                AdapterKey::Expert(m) => m == output,
                AdapterKey::Unified => unreachable!(),
            };
            (k, trainable)
        })
        .collect();
    Ok(FreezeMask {
        adapters,
        embeddings: true,
        heads: true,
    })
}

impl Variant {
    /// Mask for a task signature under this variant's freezing semantics:
    /// Single never freezes, TwoSplit keys on inputs only, FourSplit on
    /// inputs and output.
    pub fn freeze_mask(self, sig: &Signature) -> Result<FreezeMask> {
        if sig.inputs.is_empty() {
            return Err(Error::validation("freeze mask needs a nonempty input set"));
        }
        let adapters = match self {
            Variant::Single => BTreeMap::from([(AdapterKey::Unified, true)]),
            Variant::TwoSplit => Modality::ALL
                .iter()
                .map(|&m| (AdapterKey::General(m), sig.inputs.contains(&m)))
                .collect(),
            Variant::FourSplit => return derive_freeze_mask(&sig.inputs, sig.output),
        };
        Ok(FreezeMask {
            adapters,
            embeddings: true,
            heads: true,
        })
    }
}

/// JSON object keys must be strings; adapter keys serialize by code.
mod adapter_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<AdapterKey, bool>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let m: BTreeMap<String, bool> = map.iter().map(|(k, v)| (k.code(), *v)).collect();
        m.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<AdapterKey, bool>, D::Error> {
        let m = BTreeMap::<String, bool>::deserialize(d)?;
        m.into_iter()
            .map(|(k, v)| {
                k.parse::<AdapterKey>()
                    .map(|k| (k, v))
                    .map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ms: &[Modality]) -> BTreeSet<Modality> {
        ms.iter().copied().collect()
    }

    #[test]
    fn image_and_text_to_text() {
        let m = derive_freeze_mask(&set(&[Modality::Text, Modality::Image]), Modality::Text).unwrap();
        assert_eq!(
            m.trainable_adapters(),
            [AdapterKey::GI, AdapterKey::GT, AdapterKey::ET].into()
        );
        assert_eq!(m.frozen_adapters(), [AdapterKey::EI].into());
    }

    #[test]
    fn text_to_image() {
        let m = derive_freeze_mask(&set(&[Modality::Text]), Modality::Image).unwrap();
        assert_eq!(m.trainable_adapters(), [AdapterKey::GT, AdapterKey::EI].into());
        assert_eq!(m.frozen_adapters(), [AdapterKey::GI, AdapterKey::ET].into());
    }

    #[test]
    fn image_and_text_to_image() {
        let m = derive_freeze_mask(&set(&[Modality::Image, Modality::Text]), Modality::Image).unwrap();
        assert_eq!(
            m.trainable_adapters(),
            [AdapterKey::GI, AdapterKey::GT, AdapterKey::EI].into()
        );
        assert_eq!(m.frozen_adapters(), [AdapterKey::ET].into());
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(
            derive_freeze_mask(&BTreeSet::new(), Modality::Text),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn every_valid_signature_trains_something() {
        let input_sets = [
            set(&[Modality::Text]),
            set(&[Modality::Image]),
            set(&[Modality::Text, Modality::Image]),
        ];
        for inputs in &input_sets {
            for output in Modality::ALL {
                let sig = Signature {
                    inputs: inputs.clone(),
                    output,
                };
                for v in [Variant::Single, Variant::TwoSplit, Variant::FourSplit] {
                    let m = v.freeze_mask(&sig).unwrap();
                    assert!(!m.trainable_adapters().is_empty(), "{v:?} {sig}");
                    assert!(m.embeddings && m.heads);
                }
            }
        }
    }

    #[test]
    fn two_split_ignores_output() {
        let sig = Signature::new([Modality::Text], Modality::Image).unwrap();
        let m = Variant::TwoSplit.freeze_mask(&sig).unwrap();
        assert_eq!(m.trainable_adapters(), [AdapterKey::GT].into());
        assert_eq!(m.frozen_adapters(), [AdapterKey::GI].into());
    }

    #[test]
    fn mask_serializes_with_string_keys() {
        let m = derive_freeze_mask(&set(&[Modality::Text]), Modality::Text).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"GT\":true"), "{json}");
        let back: FreezeMask = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
