use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::adapter::{LoraAdapter, MageLinear};
use crate::model::freeze::FreezeMask;
use crate::model::modality::{AdapterKey, Modality, Signature};
use crate::model::tensors::{TensorMap, TensorName};
use crate::model::vocab::Vocab;
use crate::numerics::{Matrix, Rng, Tape, TensorId};

/// Token ids of one example, grouped by input modality.
pub type TokenGroups = BTreeMap<Modality, Vec<u32>>;

/// How the total adapter rank is split inside each layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Single,
    TwoSplit,
    FourSplit,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Single, Variant::TwoSplit, Variant::FourSplit];

    pub fn split_count(self) -> usize {
        match self {
            Variant::Single => 1,
            Variant::TwoSplit => 2,
            Variant::FourSplit => 4,
        }
    }

    pub fn keys(self) -> Vec<AdapterKey> {
        match self {
            Variant::Single => vec![AdapterKey::Unified],
            Variant::TwoSplit => vec![AdapterKey::GI, AdapterKey::GT],
            Variant::FourSplit => AdapterKey::FOUR.to_vec(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Single => "single",
            Variant::TwoSplit => "two-split",
            Variant::FourSplit => "four-split",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

/// Architecture descriptor. Two models with equal configs have identically
/// shaped tensors; `init_seed` only affects initial values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub total_rank: usize,
    pub alpha: f64,
    pub vocab_per_modality: u32,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub max_output_len: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::FourSplit,
            total_rank: 32,
            alpha: 32.0,
            vocab_per_modality: 64,
            embed_dim: 32,
            hidden_dim: 32,
            layers: 2,
            max_output_len: 4,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.vocab_per_modality)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("total_rank", self.total_rank),
            ("vocab_per_modality", self.vocab_per_modality as usize),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("layers", self.layers),
            ("max_output_len", self.max_output_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha must be positive"));
        }
        let n = self.variant.split_count();
        if !self.total_rank.is_multiple_of(n) {
            return Err(Error::config(format!(
                "total rank {} is not divisible by {n} for variant {}",
                self.total_rank, self.variant
            )));
        }
        Ok(())
    }

    /// Rank of each adapter in a layer.
    pub fn adapter_rank(&self) -> usize {
        self.total_rank / self.variant.split_count()
    }

    fn layer_dims(&self, l: usize) -> (usize, usize) {
        let d_in = if l == 0 {
            2 * self.embed_dim
        } else {
            self.hidden_dim
        };
        (d_in, self.hidden_dim)
    }
}

/// Embeddings, a stack of [`MageLinear`] layers with ReLU between them, and
/// one output head per modality with a separate matrix per output position.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel {
    config: ModelConfig,
    embeddings: BTreeMap<Modality, Matrix>,
    layers: Vec<MageLinear>,
    heads: BTreeMap<Modality, Vec<Matrix>>,
    train_embeddings: bool,
    train_heads: bool,
}

/// Tape ids produced by [`ToyModel::trace`].
#[derive(Debug)]
pub struct Traced {
    /// One logit column per output position.
    pub logits: Vec<TensorId>,
    /// Trainable leaves that were placed on the tape.
    pub leaves: Vec<(TensorName, TensorId)>,
}

/// Builds a model with the given adapter split. Base weights, embeddings and
/// heads depend only on `dims.init_seed`, so every variant built from the
/// same dims computes the same function until its adapters are trained.
pub fn build_variant(variant: Variant, total_rank: usize, dims: &ModelConfig) -> Result<ToyModel> {
    ToyModel::new(ModelConfig {
        variant,
        total_rank,
        ..dims.clone()
    })
}

impl ToyModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(config.init_seed);
        let vocab = config.vocab();

        let embeddings = Modality::ALL
            .iter()
            .map(|&m| {
                let mut rng = root.fork_named(&TensorName::Embedding(m).to_string());
                let table = Matrix::randn(vocab.per_modality as usize, config.embed_dim, 1.0, &mut rng);
                (m, table)
            })
            .collect();

        let rank = config.adapter_rank();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let (d_in, d_out) = config.layer_dims(l);
            let mut rng = root.fork_named(&TensorName::Base { layer: l }.to_string());
            let base = Matrix::randn(d_out, d_in, (2.0 / d_in as f64).sqrt(), &mut rng);
            let adapters = config
                .variant
                .keys()
                .into_iter()
                .map(|key| {
                    let mut rng = root.fork_named(&TensorName::Down { layer: l, key }.to_string());
                    LoraAdapter::init(key, d_in, d_out, rank, config.alpha, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(MageLinear::new(base, adapters)?);
        }
        let total: usize = layers.iter().map(MageLinear::total_rank).sum();
        assert_eq!(total, config.total_rank * config.layers, "rank conservation");

        let classes = vocab.output_classes();
        let heads = Modality::ALL
            .iter()
            .map(|&m| {
                let hs = (0..config.max_output_len)
                    .map(|_| Matrix::zeros(classes, config.hidden_dim))
                    .collect();
                (m, hs)
            })
            .collect();

        Ok(Self {
            config,
            embeddings,
            layers,
            heads,
            train_embeddings: true,
            train_heads: true,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> Vocab {
        self.config.vocab()
    }

    pub fn layers(&self) -> &[MageLinear] {
        &self.layers
    }

    pub fn layer_mut(&mut self, l: usize) -> Option<&mut MageLinear> {
        self.layers.get_mut(l)
    }

    /// Every parameter tensor in canonical order.
    pub fn tensor_names(&self) -> Vec<TensorName> {
        let mut names: Vec<TensorName> = Modality::ALL.iter().map(|&m| TensorName::Embedding(m)).collect();
        for (l, layer) in self.layers.iter().enumerate() {
            names.push(TensorName::Base { layer: l });
            for a in &layer.adapters {
                names.push(TensorName::Down { layer: l, key: a.key });
                names.push(TensorName::Up { layer: l, key: a.key });
            }
        }
        for m in Modality::ALL {
            for p in 0..self.config.max_output_len {
                names.push(TensorName::Head {
                    modality: m,
                    position: p,
                });
            }
        }
        names.sort();
        names
    }

    pub fn tensor(&self, name: &TensorName) -> Option<&Matrix> {
        match *name {
            TensorName::Embedding(m) => self.embeddings.get(&m),
            TensorName::Base { layer } => self.layers.get(layer).map(|l| &l.base),
            TensorName::Down { layer, key } => {
                self.layers.get(layer)?.adapter(key).map(|a| &a.down)
            }
            TensorName::Up { layer, key } => self.layers.get(layer)?.adapter(key).map(|a| &a.up),
            TensorName::Head { modality, position } => self.heads.get(&modality)?.get(position),
        }
    }

    pub fn tensor_mut(&mut self, name: &TensorName) -> Option<&mut Matrix> {
        match *name {
            TensorName::Embedding(m) => self.embeddings.get_mut(&m),
            TensorName::Base { layer } => self.layers.get_mut(layer).map(|l| &mut l.base),
            TensorName::Down { layer, key } => {
                self.layers.get_mut(layer)?.adapter_mut(key).map(|a| &mut a.down)
            }
            TensorName::Up { layer, key } => {
                self.layers.get_mut(layer)?.adapter_mut(key).map(|a| &mut a.up)
            }
            TensorName::Head { modality, position } => {
                self.heads.get_mut(&modality)?.get_mut(position)
            }
        }
    }

    /// Replaces a tensor's values; the shape must match.
    pub fn set_tensor(&mut self, name: &TensorName, value: Matrix) -> Result<()> {
        let slot = self
            .tensor_mut(name)
            .ok_or_else(|| Error::Lookup(format!("model has no tensor {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_tensor",
                left: slot.shape(),
                right: value.shape(),
            });
        }
        *slot = value;
        Ok(())
    }

    /// Copies of all tensors.
    pub fn parameters(&self) -> TensorMap {
        self.tensor_names()
            .into_iter()
            .map(|n| {
                let m = self.tensor(&n).expect("listed tensor exists").clone();
                (n, m)
            })
            .collect()
    }

    pub fn is_trainable(&self, name: &TensorName) -> bool {
        match *name {
            TensorName::Embedding(_) => self.train_embeddings,
            TensorName::Head { .. } => self.train_heads,
            TensorName::Base { .. } => false,
            TensorName::Down { layer, key } | TensorName::Up { layer, key } => self
                .layers
                .get(layer)
                .and_then(|l| l.adapter(key))
                .is_some_and(|a| a.trainable),
        }
    }

    pub fn trainable_names(&self) -> Vec<TensorName> {
        self.tensor_names()
            .into_iter()
            .filter(|n| self.is_trainable(n))
            .collect()
    }

    /// Applies a mask; its adapter keys must be exactly this model's keys.
    pub fn apply_mask(&mut self, mask: &FreezeMask) -> Result<()> {
        let ours: Vec<AdapterKey> = self.config.variant.keys();
        let mut theirs: Vec<AdapterKey> = mask.adapters.keys().copied().collect();
        let mut sorted = ours.clone();
        sorted.sort();
        theirs.sort();
        if sorted != theirs {
            return Err(Error::validation(format!(
                "mask adapters {theirs:?} do not match model adapters {sorted:?}"
            )));
        }
        for layer in &mut self.layers {
            for a in &mut layer.adapters {
                a.trainable = mask.adapters[&a.key];
            }
        }
        self.train_embeddings = mask.embeddings;
        self.train_heads = mask.heads;
        Ok(())
    }

    pub fn mask(&self) -> FreezeMask {
        let adapters = self
            .layers
            .first()
            .map(|l| l.adapters.iter().map(|a| (a.key, a.trainable)).collect())
            .unwrap_or_default();
        FreezeMask {
            adapters,
            embeddings: self.train_embeddings,
            heads: self.train_heads,
        }
    }

    fn check_inputs(&self, inputs: &TokenGroups, sig: &Signature) -> Result<()> {
        let vocab = self.vocab();
        for m in inputs.keys() {
            if !sig.inputs.contains(m) {
                return Err(Error::validation(format!(
                    "example carries {m} tokens but the task signature is {sig}"
                )));
            }
        }
        for m in &sig.inputs {
            let tokens = inputs.get(m).filter(|t| !t.is_empty()).ok_or_else(|| {
                Error::validation(format!("example has no {m} tokens but the task signature is {sig}"))
            })?;
            for &t in tokens {
                if !vocab.contains(*m, t) {
                    return Err(Error::Index {
                        what: match m {
                            Modality::Text => "text vocabulary",
                            Modality::Image => "image vocabulary",
                        },
                        index: t as usize,
                        len: vocab.per_modality as usize,
                    });
                }
            }
        }
        Ok(())
    }

    /// Records the forward pass for one example.
    pub fn trace<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        inputs: &TokenGroups,
        sig: &Signature,
    ) -> Result<Traced> {
        let (x, mut leaves) = self.trace_hidden(tape, inputs, sig)?;
        let mut logits = Vec::with_capacity(self.config.max_output_len);
        for (p, w) in self.heads[&sig.output].iter().enumerate() {
            let wid = if self.train_heads {
                let id = tape.param(w);
                leaves.push((
                    TensorName::Head {
                        modality: sig.output,
                        position: p,
                    },
                    id,
                ));
                id
            } else {
                tape.constant(w)
            };
            logits.push(tape.matmul(wid, x)?);
        }
        Ok(Traced { logits, leaves })
    }

    /// Final hidden state (the head input) for one example.
    pub fn hidden(&self, inputs: &TokenGroups, sig: &Signature) -> Result<Matrix> {
        let mut tape = Tape::new();
        let (x, _) = self.trace_hidden(&mut tape, inputs, sig)?;
        Ok(tape.value(x).clone())
    }

    fn trace_hidden<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        inputs: &TokenGroups,
        sig: &Signature,
    ) -> Result<(TensorId, Vec<(TensorName, TensorId)>)> {
        self.check_inputs(inputs, sig)?;
        let vocab = self.vocab();
        let mut leaves = Vec::new();

        let mut pooled = Vec::with_capacity(2);
        for m in Modality::ALL {
            let id = match inputs.get(&m) {
                Some(tokens) => {
                    let table = &self.embeddings[&m];
                    let t = if self.train_embeddings {
                        let id = tape.param(table);
                        leaves.push((TensorName::Embedding(m), id));
                        id
                    } else {
                        tape.constant(table)
                    };
                    let local: Vec<usize> = tokens
                        .iter()
                        .map(|&tok| vocab.local(m, tok).expect("checked above"))
                        .collect();
                    let rows = tape.gather(t, &local)?;
                    tape.mean_rows(rows)?
                }
                None => tape.input(Matrix::zeros(self.config.embed_dim, 1)),
            };
            pooled.push(id);
        }
        let mut x = tape.concat_rows(pooled[0], pooled[1])?;

        for (l, layer) in self.layers.iter().enumerate() {
            let (h, adapter_leaves) = layer.trace(tape, x)?;
            for (key, down, up) in adapter_leaves {
                leaves.push((TensorName::Down { layer: l, key }, down));
                leaves.push((TensorName::Up { layer: l, key }, up));
            }
            x = if l + 1 < self.layers.len() {
                tape.relu(h)?
            } else {
                h
            };
        }
        Ok((x, leaves))
    }

    /// Target tokens padded with the end marker to the full output length.
    pub fn padded_target(&self, target: &[u32], sig: &Signature) -> Result<Vec<usize>> {
        let vocab = self.vocab();
        let p = self.config.max_output_len;
        if target.is_empty() || target.len() > p {
            return Err(Error::validation(format!(
                "target length {} outside 1..={p}",
                target.len()
            )));
        }
        if let Some(&bad) = target.iter().find(|&&t| !vocab.contains(sig.output, t)) {
            return Err(Error::validation(format!(
                "target token {bad} is not a {} token",
                sig.output
            )));
        }
        let mut out: Vec<usize> = target.iter().map(|&t| t as usize).collect();
        out.resize(p, vocab.eos() as usize);
        Ok(out)
    }

    fn trace_loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        inputs: &TokenGroups,
        sig: &Signature,
        target: &[u32],
    ) -> Result<(TensorId, Traced)> {
        let padded = self.padded_target(target, sig)?;
        let traced = self.trace(tape, inputs, sig)?;
        let terms = traced
            .logits
            .iter()
            .zip(&padded)
            .map(|(&l, &t)| tape.softmax_ce(l, t))
            .collect::<Result<Vec<_>>>()?;
        let sum = tape.sum_scalars(&terms)?;
        let loss = tape.scale(sum, 1.0 / padded.len() as f64)?;
        Ok((loss, traced))
    }

    /// Mean cross-entropy over output positions.
    pub fn loss(&self, inputs: &TokenGroups, sig: &Signature, target: &[u32]) -> Result<f64> {
        let mut tape = Tape::new();
        let (loss, _) = self.trace_loss(&mut tape, inputs, sig, target)?;
        Ok(tape.value(loss).get(0, 0))
    }

    /// Loss and gradients of every trainable tensor the example touches.
    /// Trainable tensors absent from the map have an exactly zero gradient.
    pub fn loss_and_grads(
        &self,
        inputs: &TokenGroups,
        sig: &Signature,
        target: &[u32],
    ) -> Result<(f64, TensorMap)> {
        let mut tape = Tape::new();
        let (loss, traced) = self.trace_loss(&mut tape, inputs, sig, target)?;
        let value = tape.value(loss).get(0, 0);
        let mut grads = tape.backward(loss)?;
        let map = traced
            .leaves
            .into_iter()
            .map(|(name, id)| (name, grads.take(id)))
            .collect();
        Ok((value, map))
    }

    /// Logits per output position.
    pub fn logits(&self, inputs: &TokenGroups, sig: &Signature) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let traced = self.trace(&mut tape, inputs, sig)?;
        Ok(traced
            .logits
            .iter()
            .map(|&id| tape.value(id).data().to_vec())
            .collect())
    }

    /// Arg-max token per position, cut at the first end marker.
    pub fn predict(&self, inputs: &TokenGroups, sig: &Signature) -> Result<Vec<u32>> {
        let eos = self.vocab().eos();
        let mut out = Vec::new();
        for l in self.logits(inputs, sig)? {
            let best = argmax(&l) as u32;
            if best == eos {
                break;
            }
            out.push(best);
        }
        Ok(out)
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::freeze::derive_freeze_mask;
    use crate::numerics::finite_diff_check;

    fn small() -> ModelConfig {
        ModelConfig {
            vocab_per_modality: 8,
            embed_dim: 4,
            hidden_dim: 5,
            total_rank: 4,
            max_output_len: 2,
            init_seed: 7,
            ..ModelConfig::default()
        }
    }

    fn vqa_sig() -> Signature {
        Signature::new([Modality::Text, Modality::Image], Modality::Text).unwrap()
    }

    fn example() -> TokenGroups {
        BTreeMap::from([(Modality::Text, vec![1, 3]), (Modality::Image, vec![9, 12, 15])])
    }

    fn trained_like(mut m: ToyModel, seed: u64) -> ToyModel {
        let mut rng = Rng::new(seed);
        for n in m.tensor_names() {
            let t = m.tensor_mut(&n).unwrap();
            *t = t.map(|v| v + 0.3 * rng.normal());
        }
        m
    }

    #[test]
    fn rank_split() {
        let d = ModelConfig::default();
        for (v, r) in [(Variant::FourSplit, 8), (Variant::TwoSplit, 16), (Variant::Single, 32)] {
            let m = build_variant(v, 32, &d).unwrap();
            for layer in m.layers() {
                assert!(layer.adapters.iter().all(|a| a.rank() == r));
                assert_eq!(layer.total_rank(), 32);
            }
        }
        assert!(matches!(build_variant(Variant::TwoSplit, 31, &d), Err(Error::Config(_))));
        assert!(matches!(build_variant(Variant::FourSplit, 30, &d), Err(Error::Config(_))));
    }

    #[test]
    fn variants_agree_at_init() {
        let d = ModelConfig {
            init_seed: 7,
            ..ModelConfig::default()
        };
        let ex = BTreeMap::from([(Modality::Text, vec![2, 5, 60]), (Modality::Image, vec![70, 100])]);
        let reference = build_variant(Variant::Single, 32, &d)
            .unwrap()
            .layers()
            .iter()
            .map(|l| l.effective_weight())
            .collect::<Vec<_>>();
        for v in Variant::ALL {
            let m = build_variant(v, 32, &d).unwrap();
            for (l, w) in m.layers().iter().zip(&reference) {
                assert_eq!(&l.effective_weight(), w);
            }
            let _ = m.logits(&ex, &vqa_sig()).unwrap();
        }
    }

    #[test]
    fn zero_heads_give_uniform_logits() {
        let m = ToyModel::new(small()).unwrap();
        for l in m.logits(&example(), &vqa_sig()).unwrap() {
            assert!(l.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = ToyModel::new(small()).unwrap();
        let sig = vqa_sig();
        let missing = BTreeMap::from([(Modality::Text, vec![1])]);
        assert!(matches!(m.logits(&missing, &sig), Err(Error::Validation(_))));
        let wrong_range = BTreeMap::from([(Modality::Text, vec![9]), (Modality::Image, vec![9])]);
        assert!(matches!(m.logits(&wrong_range, &sig), Err(Error::Index { .. })));
        let text_only = Signature::new([Modality::Text], Modality::Image).unwrap();
        assert!(matches!(m.logits(&example(), &text_only), Err(Error::Validation(_))));
        assert!(m.loss(&example(), &sig, &[9]).is_err(), "image token as text target");
        assert!(m.loss(&example(), &sig, &[1, 2, 3]).is_err(), "too long");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = trained_like(ToyModel::new(small()).unwrap(), 3);
        let sig = vqa_sig();
        m.apply_mask(&derive_freeze_mask(&sig.inputs, sig.output).unwrap()).unwrap();
        let target = [2u32];
        let (_, grads) = m.loss_and_grads(&example(), &sig, &target).unwrap();
        for name in m.trainable_names() {
            let analytic = grads
                .get(&name)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(m.tensor(&name).unwrap().rows(), m.tensor(&name).unwrap().cols()));
            let params = m.tensor(&name).unwrap().data().to_vec();
            let shape = m.tensor(&name).unwrap().shape();
            let mut probe = m.clone();
            let r = finite_diff_check(
                |p| {
                    probe
                        .set_tensor(&name, Matrix::new(shape.0, shape.1, p.to_vec()).unwrap())
                        .unwrap();
                    probe.loss(&example(), &sig, &target).unwrap()
                },
                &params,
                analytic.data(),
                1e-5,
            );
            assert!(r.max_rel_err < 1e-4, "{name}: {r:?}");
        }
    }

    #[test]
    fn frozen_adapters_get_no_gradient_entry() {
        let mut m = trained_like(ToyModel::new(small()).unwrap(), 1);
        let sig = vqa_sig();
        m.apply_mask(&derive_freeze_mask(&sig.inputs, sig.output).unwrap()).unwrap();
        let (_, grads) = m.loss_and_grads(&example(), &sig, &[1]).unwrap();
        for n in grads.names() {
            assert_ne!(n.adapter_key(), Some(AdapterKey::EI), "{n}");
            assert!(m.is_trainable(n));
        }
        assert!(grads.contains(&TensorName::Up { layer: 1, key: AdapterKey::ET }));
    }

    #[test]
    fn mask_keys_must_match_variant() {
        let mut m = build_variant(Variant::Single, 4, &small()).unwrap();
        let four = derive_freeze_mask(&vqa_sig().inputs, Modality::Text).unwrap();
        assert!(m.apply_mask(&four).is_err());
        let single = Variant::Single.freeze_mask(&vqa_sig()).unwrap();
        m.apply_mask(&single).unwrap();
        assert_eq!(m.mask(), single);
    }

    #[test]
    fn predict_stops_at_end_marker() {
        let mut m = trained_like(ToyModel::new(small()).unwrap(), 5);
        let sig = vqa_sig();
        let x = m.hidden(&example(), &sig).unwrap();
        let classes = m.vocab().output_classes();
        let eos = m.vocab().eos() as usize;
        // row c of a head equal to x scores class c at |x|^2 > 0, all else 0
        let head_for = |class: usize| {
            let mut w = Matrix::zeros(classes, x.rows());
            for (c, &v) in x.data().iter().enumerate() {
                w.set(class, c, v);
            }
            w
        };
        let name = |p| TensorName::Head { modality: Modality::Text, position: p };
        m.set_tensor(&name(0), head_for(3)).unwrap();
        m.set_tensor(&name(1), head_for(eos)).unwrap();
        assert_eq!(m.predict(&example(), &sig).unwrap(), vec![3]);
        m.set_tensor(&name(1), head_for(5)).unwrap();
        assert_eq!(m.predict(&example(), &sig).unwrap(), vec![3, 5]);
        m.set_tensor(&name(0), head_for(eos)).unwrap();
        assert_eq!(m.predict(&example(), &sig).unwrap(), Vec::<u32>::new());
    }

    #[test]
    fn argmax_takes_first_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }
}
