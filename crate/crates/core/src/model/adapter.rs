use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::modality::AdapterKey;
use crate::numerics::{Matrix, Rng, Tape, TensorId};

/// Low-rank update `(alpha / rank) * up * down`, applied as `down` first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub key: AdapterKey,
    /// `rank x d_in`
    pub down: Matrix,
    /// `d_out x rank`
    pub up: Matrix,
    pub alpha: f64,
    pub trainable: bool,
}

impl LoraAdapter {
    /// `down ~ N(0, 1/rank)`, `up = 0`, so the update starts at exactly zero.
    pub fn init(
        key: AdapterKey,
        d_in: usize,
        d_out: usize,
        rank: usize,
        alpha: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::config(format!("adapter {key} has rank 0")));
        }
        if alpha <= 0.0 {
            return Err(Error::config("lora alpha must be positive"));
        }
        Ok(Self {
            key,
            down: Matrix::randn(rank, d_in, (1.0 / rank as f64).sqrt(), rng),
            up: Matrix::zeros(d_out, rank),
            alpha,
            trainable: true,
        })
    }

    pub fn rank(&self) -> usize {
        self.down.rows()
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    /// Dense `d_out x d_in` update matrix.
    pub fn delta(&self) -> Matrix {
        self.up
            .matmul(&self.down)
            .expect("adapter factors are shape-checked at construction")
            .scale(self.scaling())
    }
}

/// A frozen base weight plus an equal-weight sum of low-rank adapters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MageLinear {
    /// `d_out x d_in`, never trained.
    pub base: Matrix,
    pub adapters: Vec<LoraAdapter>,
}

impl MageLinear {
    pub fn new(base: Matrix, adapters: Vec<LoraAdapter>) -> Result<Self> {
        let (d_out, d_in) = base.shape();
        for a in &adapters {
            if a.down.cols() != d_in || a.up.rows() != d_out || a.up.cols() != a.down.rows() {
                return Err(Error::Shape {
                    op: "adapter",
                    left: a.up.shape(),
                    right: a.down.shape(),
                });
            }
        }
        let mut keys: Vec<AdapterKey> = adapters.iter().map(|a| a.key).collect();
        keys.sort();
        keys.dedup();
        if keys.len() != adapters.len() {
            return Err(Error::validation("duplicate adapter key in one layer"));
        }
        Ok(Self { base, adapters })
    }

    pub fn d_in(&self) -> usize {
        self.base.cols()
    }

    pub fn d_out(&self) -> usize {
        self.base.rows()
    }

    pub fn total_rank(&self) -> usize {
        self.adapters.iter().map(LoraAdapter::rank).sum()
    }

    pub fn adapter(&self, key: AdapterKey) -> Option<&LoraAdapter> {
        self.adapters.iter().find(|a| a.key == key)
    }

    pub fn adapter_mut(&mut self, key: AdapterKey) -> Option<&mut LoraAdapter> {
        self.adapters.iter_mut().find(|a| a.key == key)
    }

    /// `W_o + sum of all adapter updates`, frozen or not.
    pub fn effective_weight(&self) -> Matrix {
        let mut w = self.base.clone();
        for a in &self.adapters {
            w.add_assign(&a.delta()).expect("shapes checked");
        }
        w
    }

    /// Records `h = W_o x + sum_k s_k up_k (down_k x)` on the tape.
    ///
    /// Frozen adapters enter as constants: they still contribute to `h` but
    /// receive no gradient. Returns the output id and, for each trainable
    /// adapter, the ids of its `(down, up)` leaves.
    pub fn trace<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        x: TensorId,
    ) -> Result<(TensorId, Vec<(AdapterKey, TensorId, TensorId)>)> {
        let base = tape.constant(&self.base);
        let mut h = tape.matmul(base, x)?;
        let mut leaves = Vec::new();
        for a in &self.adapters {
            let (down, up) = if a.trainable {
                (tape.param(&a.down), tape.param(&a.up))
            } else {
                (tape.constant(&a.down), tape.constant(&a.up))
            };
            let z = tape.matmul(down, x)?;
            let u = tape.matmul(up, z)?;
            let u = tape.scale(u, a.scaling())?;
            h = tape.add(h, u)?;
            if a.trainable {
                leaves.push((a.key, down, up));
            }
        }
        Ok((h, leaves))
    }
}

/// Untraced forward pass of one layer on a column vector.
pub fn mage_forward(layer: &MageLinear, x: &Matrix) -> Result<Matrix> {
    if x.cols() != 1 || x.rows() != layer.d_in() {
        return Err(Error::Shape {
            op: "mage_forward",
            left: layer.base.shape(),
            right: x.shape(),
        });
    }
    let mut h = layer.base.matmul(x)?;
    for a in &layer.adapters {
        let z = a.down.matmul(x)?;
        let u = a.up.matmul(&z)?;
        h.axpy(a.scaling(), &u)?;
    }
    Ok(h)
}
