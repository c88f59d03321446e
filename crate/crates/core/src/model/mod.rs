//! Modality-split low-rank adapters and the toy model built from them.

pub mod adapter;
pub mod checkpoint;
pub mod delta;
pub mod freeze;
pub mod modality;
pub mod tensors;
pub mod toy;
pub mod vocab;

pub use adapter::{mage_forward, LoraAdapter, MageLinear};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use delta::{param_delta, Heatmap, ParamDelta};
pub use freeze::{derive_freeze_mask, FreezeMask};
pub use modality::{AdapterKey, Modality, Signature};
pub use tensors::{TensorMap, TensorName};
pub use toy::{argmax, build_variant, ModelConfig, ToyModel, TokenGroups, Traced, Variant};
pub use vocab::Vocab;
