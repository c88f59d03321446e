//! Fisher-weighted parameter-wise EMA of model weights.
//!
//! Per optimizer step and per trainable parameter:
//!
//! ```text
//! F    = mean over the batch of (dL/dθ)^2          per-sample gradients
//! Ĥ    = F^2 + λ
//! β    = clamp((g + 1) / ((θ - θ*_prev) Ĥ), 0, 1)  β = 1 if |θ - θ*_prev| < ε
//! θ*  <- β θ + (1 - β) θ*
//! ```
//!
//! `θ*_prev` is the shadow snapshot taken when the current task began and
//! `g` is the batch-mean gradient.

mod oracles;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TensorMap, TensorName, ToyModel};
use crate::numerics::Matrix;

pub use oracles::{damping_eigen_oracle, fisher_equals_neg_hessian_oracle, DampingReport, FisherReport};

pub const DEFAULT_LAMBDA: f64 = 1e-5;
pub const DEFAULT_EPS_DELTA: f64 = 1e-12;
pub const DEFAULT_STABLE_WEIGHT: f64 = 0.99;

/// Running sum of squared per-sample gradients.
#[derive(Clone, Debug, Default)]
pub struct FisherAccumulator {
    sums: TensorMap,
    count: usize,
}

impl FisherAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one sample's gradients. Tensors missing from `grads` count as
    /// zero for this sample.
    pub fn add_sample(&mut self, grads: &TensorMap) -> Result<()> {
        for (name, g) in grads.iter() {
            let sq = g.map(|v| v * v);
            match self.sums.get_mut(name) {
                Some(acc) => acc.add_assign(&sq)?,
                None => {
                    self.sums.insert(*name, sq);
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `sum / count` per tensor.
    pub fn finalize(&self) -> Result<TensorMap> {
        if self.count == 0 {
            return Err(Error::validation("Fisher estimate over an empty batch"));
        }
        let mut f = self.sums.clone();
        f.scale_all(1.0 / self.count as f64);
        Ok(f)
    }
}

/// Diagonal Fisher from per-sample gradients.
pub fn fisher_diag(per_sample: &[TensorMap]) -> Result<TensorMap> {
    let mut acc = FisherAccumulator::new();
    for g in per_sample {
        acc.add_sample(g)?;
    }
    acc.finalize()
}

/// `Ĥ = F^2 + λ`, elementwise.
pub fn damped_inverse(fisher: &Matrix, lambda: f64) -> Result<Matrix> {
    check_lambda(lambda)?;
    Ok(fisher.map(|f| f * f + lambda))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!("damping must be positive, got {lambda}")));
    }
    Ok(())
}

/// One parameter's EMA weight. Always in `[0, 1]` for finite inputs with
/// `h_hat > 0`.
pub fn ema_weight(g: f64, delta: f64, h_hat: f64, eps_delta: f64) -> f64 {
    if delta.abs() < eps_delta {
        return 1.0;
    }
    let raw = (g + 1.0) / (delta * h_hat);
    if raw.is_nan() {
        1.0
    } else {
        raw.clamp(0.0, 1.0)
    }
}

/// Elementwise [`ema_weight`] over a tensor.
pub fn ema_weights(
    grad: &Matrix,
    theta: &Matrix,
    theta_prev_star: &Matrix,
    h_hat: &Matrix,
    eps_delta: f64,
) -> Result<Matrix> {
    grad.check_same_shape(theta, "ema_weights")?;
    theta.check_same_shape(theta_prev_star, "ema_weights")?;
    theta.check_same_shape(h_hat, "ema_weights")?;
    let data = grad
        .data()
        .iter()
        .zip(theta.data())
        .zip(theta_prev_star.data())
        .zip(h_hat.data())
        .map(|(((&g, &t), &p), &h)| ema_weight(g, t - p, h, eps_delta))
        .collect();
    Matrix::new(theta.rows(), theta.cols(), data)
}

/// `shadow <- β θ + (1 - β) shadow`, elementwise.
pub fn ema_update(shadow: &mut Matrix, theta: &Matrix, beta: &Matrix) -> Result<()> {
    shadow.check_same_shape(theta, "ema_update")?;
    shadow.check_same_shape(beta, "ema_update")?;
    for ((s, &t), &b) in shadow.data_mut().iter_mut().zip(theta.data()).zip(beta.data()) {
        *s = b * t + (1.0 - b) * *s;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum EmaPolicy {
    Pema,
    /// `shadow <- w shadow + (1 - w) θ` with constant `w`.
    Stable { weight: f64 },
    Off,
}

impl EmaPolicy {
    pub fn validate(&self) -> Result<()> {
        if let EmaPolicy::Stable { weight } = *self {
            if !(weight > 0.0 && weight < 1.0) {
                return Err(Error::config(format!("stable EMA weight {weight} outside (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn is_off(&self) -> bool {
        matches!(self, EmaPolicy::Off)
    }
}

impl fmt::Display for EmaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmaPolicy::Pema => f.write_str("pema"),
            EmaPolicy::Stable { weight } => write!(f, "stable:{weight}"),
            EmaPolicy::Off => f.write_str("off"),
        }
    }
}

impl FromStr for EmaPolicy {
    type Err = Error;

    /// `pema`, `off`, `stable` (weight 0.99) or `stable:<weight>`.
    fn from_str(s: &str) -> Result<Self> {
        let p = match s {
            "pema" => EmaPolicy::Pema,
            "off" => EmaPolicy::Off,
            "stable" => EmaPolicy::Stable {
                weight: DEFAULT_STABLE_WEIGHT,
            },
            other => match other.strip_prefix("stable:") {
                Some(w) => EmaPolicy::Stable {
                    weight: w
                        .parse()
                        .map_err(|_| Error::config(format!("bad stable EMA weight {w:?}")))?,
                },
                None => return Err(Error::config(format!("unknown EMA policy {other:?}"))),
            },
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<EmaPolicy> for String {
    fn from(p: EmaPolicy) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for EmaPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Counts of EMA weights seen in one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BetaStats {
    pub count: usize,
    pub ones: usize,
    pub zeros: usize,
    pub sum: f64,
}

impl BetaStats {
    fn record(&mut self, beta: &Matrix) {
        for &b in beta.data() {
            self.count += 1;
            self.sum += b;
            if b == 1.0 {
                self.ones += 1;
            } else if b == 0.0 {
                self.zeros += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &BetaStats) {
        self.count += other.count;
        self.ones += other.ones;
        self.zeros += other.zeros;
        self.sum += other.sum;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Shadow weights and the previous-task snapshot for every tensor that can
/// ever be trained (everything but the base weights).
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    pub shadow: TensorMap,
    pub anchor: TensorMap,
    pub lambda: f64,
    pub eps_delta: f64,
}

fn adaptable(name: &TensorName) -> bool {
    !matches!(name, TensorName::Base { .. })
}

impl EmaState {
    /// Shadow and anchor both start at the model's current weights.
    pub fn new(model: &ToyModel, lambda: f64, eps_delta: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let shadow: TensorMap = model
            .parameters()
            .into_iter()
            .filter(|(n, _)| adaptable(n))
            .collect();
        Ok(Self {
            anchor: shadow.clone(),
            shadow,
            lambda,
            eps_delta,
        })
    }

    /// Restores a state from a saved shadow. The anchor equals the shadow at
    /// every task boundary, which is where checkpoints are written.
    pub fn from_shadow(shadow: TensorMap, lambda: f64, eps_delta: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            anchor: shadow.clone(),
            shadow,
            lambda,
            eps_delta,
        })
    }

    /// Snapshots the shadow as the previous-task reference.
    pub fn begin_task(&mut self) {
        self.anchor = self.shadow.clone();
    }

    fn trainable<'m>(&self, model: &'m ToyModel) -> Result<Vec<(TensorName, &'m Matrix)>> {
        model
            .trainable_names()
            .into_iter()
            .map(|n| {
                if !self.shadow.contains(&n) {
                    return Err(Error::Lookup(format!("no shadow for tensor {n}")));
                }
                Ok((n, model.tensor(&n).expect("listed")))
            })
            .collect()
    }

    /// PEMA update of every trainable tensor. `grad` and `fisher` may omit
    /// tensors whose values are all zero.
    pub fn step_pema(&mut self, model: &ToyModel, grad: &TensorMap, fisher: &TensorMap) -> Result<BetaStats> {
        let mut stats = BetaStats::default();
        for (name, theta) in self.trainable(model)? {
            let zeros = || Matrix::zeros(theta.rows(), theta.cols());
            let g = grad.get(&name).cloned().unwrap_or_else(zeros);
            let f = fisher.get(&name).cloned().unwrap_or_else(zeros);
            let h = damped_inverse(&f, self.lambda)?;
            let anchor = self.anchor.get(&name).expect("anchor mirrors shadow");
            let beta = ema_weights(&g, theta, anchor, &h, self.eps_delta)?;
            stats.record(&beta);
            ema_update(self.shadow.get_mut(&name).expect("checked"), theta, &beta)?;
        }
        Ok(stats)
    }

    /// Constant-weight update of every trainable tensor.
    pub fn step_stable(&mut self, model: &ToyModel, weight: f64) -> Result<()> {
        for (name, theta) in self.trainable(model)? {
            let beta = Matrix::filled(theta.rows(), theta.cols(), 1.0 - weight);
            ema_update(self.shadow.get_mut(&name).expect("checked"), theta, &beta)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_freeze_mask, AdapterKey, Modality, ModelConfig};
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::filled(1, 1, v)
    }

    #[test]
    fn weight_examples() {
        assert_eq!(ema_weight(0.0, 1.0, 1.0, 1e-12), 1.0);
        assert_eq!(ema_weight(0.0, 2.0, 1.0, 1e-12), 0.5);
        assert_eq!(ema_weight(0.0, -1.0, 1.0, 1e-12), 0.0);
        assert_eq!(ema_weight(5.0, 0.0, 1.0, 1e-12), 1.0);
        assert_eq!(ema_weight(5.0, 1e-13, 1.0, 1e-12), 1.0);
    }

    #[test]
    fn damping_examples() {
        assert_eq!(damped_inverse(&scalar(0.0), 1e-5).unwrap().get(0, 0), 1e-5);
        assert_eq!(damped_inverse(&scalar(2.0), 1e-5).unwrap().get(0, 0), 4.0 + 1e-5);
        assert!(damped_inverse(&scalar(1.0), 0.0).is_err());
    }

    #[test]
    fn update_examples() {
        let mut s = scalar(0.0);
        ema_update(&mut s, &scalar(2.0), &scalar(0.25)).unwrap();
        assert_eq!(s.get(0, 0), 0.5);
        let mut s = scalar(3.0);
        ema_update(&mut s, &scalar(2.0), &scalar(1.0)).unwrap();
        assert_eq!(s.get(0, 0), 2.0);
        let mut s = scalar(3.0);
        ema_update(&mut s, &scalar(2.0), &scalar(0.0)).unwrap();
        assert_eq!(s.get(0, 0), 3.0);
        assert!(ema_update(&mut s, &Matrix::zeros(2, 1), &scalar(0.0)).is_err());
    }

    #[test]
    fn fisher_examples() {
        let n = TensorName::Base { layer: 0 };
        let g = |v: Vec<f64>| -> TensorMap { [(n, Matrix::column(v))].into_iter().collect() };
        assert_eq!(fisher_diag(&[g(vec![0.0, 0.0]), g(vec![0.0, 0.0])]).unwrap().get(&n).unwrap().max_abs(), 0.0);
        assert_eq!(
            fisher_diag(&[g(vec![3.0, -2.0])]).unwrap().get(&n).unwrap(),
            &Matrix::column(vec![9.0, 4.0])
        );
        // missing tensor in one sample counts as a zero gradient
        let f = fisher_diag(&[g(vec![2.0, 0.0]), TensorMap::new()]).unwrap();
        assert_eq!(f.get(&n).unwrap(), &Matrix::column(vec![2.0, 0.0]));
        assert!(matches!(fisher_diag(&[]), Err(Error::Validation(_))));
    }

    #[test]
    fn stable_three_steps_by_hand() {
        let model = ToyModel::new(ModelConfig {
            vocab_per_modality: 2,
            embed_dim: 1,
            hidden_dim: 1,
            total_rank: 4,
            max_output_len: 1,
            ..ModelConfig::default()
        })
        .unwrap();
        let name = TensorName::Up { layer: 0, key: AdapterKey::GT };
        let mut st = EmaState::new(&model, DEFAULT_LAMBDA, DEFAULT_EPS_DELTA).unwrap();
        st.shadow.insert(name, scalar(1.0));
        let mut m = model.clone();
        let mut expected = 1.0;
        for theta in [2.0, 4.0, -1.0] {
            m.set_tensor(&name, scalar(theta)).unwrap();
            st.step_stable(&m, 0.99).unwrap();
            expected = 0.99 * expected + 0.01 * theta;
        }
        // 1.01, then 0.99 * 1.01 + 0.04 = 1.0399, then 0.99 * 1.0399 - 0.01
        assert!((expected - 1.019501).abs() < 1e-12);
        assert!((st.shadow.get(&name).unwrap().get(0, 0) - 1.019501).abs() < 1e-12);
    }

    #[test]
    fn frozen_shadows_do_not_move() {
        let mut model = ToyModel::new(ModelConfig {
            vocab_per_modality: 4,
            embed_dim: 2,
            hidden_dim: 3,
            total_rank: 4,
            max_output_len: 1,
            ..ModelConfig::default()
        })
        .unwrap();
        let sig = Modality::Text;
        model
            .apply_mask(&derive_freeze_mask(&[Modality::Text].into(), sig).unwrap())
            .unwrap();
        let mut st = EmaState::new(&model, DEFAULT_LAMBDA, DEFAULT_EPS_DELTA).unwrap();
        let before = st.shadow.clone();
        let mut rng = Rng::new(1);
        for n in model.tensor_names() {
            let t = model.tensor_mut(&n).unwrap();
            *t = t.map(|v| v + rng.normal());
        }
        st.step_pema(&model, &TensorMap::new(), &TensorMap::new()).unwrap();
        st.step_stable(&model, 0.5).unwrap();
        for (n, s) in st.shadow.iter() {
            if model.is_trainable(n) {
                assert_ne!(s, before.get(n).unwrap(), "{n}");
            } else {
                assert_eq!(s, before.get(n).unwrap(), "{n}");
            }
        }
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("pema".parse::<EmaPolicy>().unwrap(), EmaPolicy::Pema);
        assert_eq!("off".parse::<EmaPolicy>().unwrap(), EmaPolicy::Off);
        assert_eq!(
            "stable".parse::<EmaPolicy>().unwrap(),
            EmaPolicy::Stable { weight: 0.99 }
        );
        assert_eq!(
            "stable:0.9".parse::<EmaPolicy>().unwrap(),
            EmaPolicy::Stable { weight: 0.9 }
        );
        assert!("stable:1.5".parse::<EmaPolicy>().is_err());
        assert!("adam".parse::<EmaPolicy>().is_err());
        let json = serde_json::to_string(&EmaPolicy::Stable { weight: 0.9 }).unwrap();
        assert_eq!(json, "\"stable:0.9\"");
        assert_eq!(serde_json::from_str::<EmaPolicy>(&json).unwrap(), EmaPolicy::Stable { weight: 0.9 });
    }

    proptest! {
        #[test]
        fn weights_always_in_unit_interval(
            g in -1e6f64..1e6,
            delta in prop_oneof![Just(0.0), -1e3f64..1e3, -1e-11f64..1e-11],
            f in 0.0f64..1e3,
        ) {
            let h = f * f + DEFAULT_LAMBDA;
            let b = ema_weight(g, delta, h, DEFAULT_EPS_DELTA);
            prop_assert!((0.0..=1.0).contains(&b));
        }

        #[test]
        fn shadow_stays_on_segment(
            s0 in -10f64..10.0,
            t in -10f64..10.0,
            g in -5f64..5.0,
            anchor in -10f64..10.0,
            f in 0f64..3.0,
        ) {
            let h = damped_inverse(&scalar(f), DEFAULT_LAMBDA).unwrap();
            let beta = ema_weights(&scalar(g), &scalar(t), &scalar(anchor), &h, DEFAULT_EPS_DELTA).unwrap();
            let mut s = scalar(s0);
            ema_update(&mut s, &scalar(t), &beta).unwrap();
            let v = s.get(0, 0);
            let (lo, hi) = (s0.min(t), s0.max(t));
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
