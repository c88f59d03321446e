//! Reverse-mode gradient tape over [`Matrix`] values.
//!
//! The primitive set is deliberately small: matmul, add, scale, row gather
//! (embedding lookup), relu, mean pooling, vertical concatenation and
//! softmax cross-entropy. Every op is recorded in creation order and the
//! backward pass walks the records in exact reverse.
//!
//! Leaves borrow their values, so tracing a model does not copy its weights.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    Scale(TensorId, f64),
    Gather { table: TensorId, ids: Vec<usize> },
    Relu(TensorId),
    MeanRows(TensorId),
    ConcatRows(TensorId, TensorId),
    SoftmaxCe { logits: TensorId, target: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Record<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<'a> {
    records: Vec<Record<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op, needs_grad: bool) -> TensorId {
        self.records.push(Record {
            value,
            op,
            needs_grad,
        });
        TensorId(self.records.len() - 1)
    }

    fn record(&self, id: TensorId) -> Result<&Record<'a>> {
        self.records
            .get(id.0)
            .ok_or_else(|| Error::Trace(format!("tensor #{} is not on this tape", id.0)))
    }

    fn needs(&self, id: TensorId) -> bool {
        self.records[id.0].needs_grad
    }

    /// Borrowed trainable leaf: receives a gradient.
    pub fn param(&mut self, value: &'a Matrix) -> TensorId {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Borrowed leaf that never receives a gradient.
    pub fn constant(&mut self, value: &'a Matrix) -> TensorId {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    /// Owned leaf that never receives a gradient.
    pub fn input(&mut self, value: Matrix) -> TensorId {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn value(&self, id: TensorId) -> &Matrix {
        &self.records[id.0].value
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = self.record(a)?.value.matmul(&self.record(b)?.value)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(value), Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let value = self.record(a)?.value.add(&self.record(b)?.value)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(value), Op::Add(a, b), needs))
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> Result<TensorId> {
        let value = self.record(a)?.value.scale(factor);
        let needs = self.needs(a);
        Ok(self.push(Cow::Owned(value), Op::Scale(a, factor), needs))
    }

    /// Rows of `table` selected by `ids`, in order (embedding lookup).
    pub fn gather(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let t = &self.record(table)?.value;
        let cols = t.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= t.rows() {
                return Err(Error::Index {
                    what: "embedding table",
                    index: i,
                    len: t.rows(),
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Matrix::new(ids.len(), cols, data)?;
        let needs = self.needs(table);
        Ok(self.push(
            Cow::Owned(value),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        let value = self.record(a)?.value.map(|v| v.max(0.0));
        let needs = self.needs(a);
        Ok(self.push(Cow::Owned(value), Op::Relu(a), needs))
    }

    /// Mean over rows, returned as a column: `n x d -> d x 1`.
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let m = &self.record(a)?.value;
        if m.rows() == 0 {
            return Err(Error::validation("mean pooling over zero rows"));
        }
        let n = m.rows() as f64;
        let mut col = vec![0.0; m.cols()];
        for r in 0..m.rows() {
            for (acc, v) in col.iter_mut().zip(m.row(r)) {
                *acc += v;
            }
        }
        col.iter_mut().for_each(|v| *v /= n);
        let needs = self.needs(a);
        Ok(self.push(Cow::Owned(Matrix::column(col)), Op::MeanRows(a), needs))
    }

    /// Stacks `a` on top of `b`; both must have the same column count.
    pub fn concat_rows(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ma, mb) = (&self.record(a)?.value, &self.record(b)?.value);
        if ma.cols() != mb.cols() {
            return Err(Error::Shape {
                op: "concat_rows",
                left: ma.shape(),
                right: mb.shape(),
            });
        }
        let mut data = ma.data().to_vec();
        data.extend_from_slice(mb.data());
        let value = Matrix::new(ma.rows() + mb.rows(), ma.cols(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Cow::Owned(value), Op::ConcatRows(a, b), needs))
    }

    /// `-log softmax(logits)[target]` as a `1 x 1` value. `logits` must be a
    /// row or column vector.
    pub fn softmax_ce(&mut self, logits: TensorId, target: usize) -> Result<TensorId> {
        let l = &self.record(logits)?.value;
        if l.rows() != 1 && l.cols() != 1 {
            return Err(Error::Shape {
                op: "softmax_ce",
                left: l.shape(),
                right: (1, 1),
            });
        }
        let (loss, probs) = ce_with_probs(l.data(), target)?;
        let needs = self.needs(logits);
        Ok(self.push(
            Cow::Owned(Matrix::filled(1, 1, loss)),
            Op::SoftmaxCe {
                logits,
                target,
                probs,
            },
            needs,
        ))
    }

    /// Sum of several `1 x 1` values.
    pub fn sum_scalars(&mut self, items: &[TensorId]) -> Result<TensorId> {
        let (&first, rest) = items
            .split_first()
            .ok_or_else(|| Error::Trace("sum of zero scalars".into()))?;
        rest.iter().try_fold(first, |acc, &x| self.add(acc, x))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: TensorId) -> Result<Gradients> {
        let rec = self.record(loss)?;
        if rec.value.shape() != (1, 1) {
            return Err(Error::Trace(format!(
                "backward needs a 1x1 loss, got {:?}",
                rec.value.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.records.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let rec = &self.records[idx];
            if !rec.needs_grad || matches!(rec.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            match &rec.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let g = upstream.matmul_t(self.value(*b))?;
                        accumulate(&mut grads, *a, g)?;
                    }
                    if self.needs(*b) {
                        let g = self.value(*a).t_matmul(&upstream)?;
                        accumulate(&mut grads, *b, g)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, upstream.clone())?;
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, upstream.clone())?;
                    }
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, upstream.scale(*f))?,
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut g = Matrix::zeros(t.rows(), t.cols());
                    for (r, &i) in ids.iter().enumerate() {
                        let cols = t.cols();
                        let dst = &mut g.data_mut()[i * cols..(i + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(upstream.row(r)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *table, g)?;
                }
                Op::Relu(a) => {
                    let g = upstream.zip_map(self.value(*a), "relu_backward", |u, x| {
                        if x > 0.0 {
                            u
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::MeanRows(a) => {
                    let input = self.value(*a);
                    let n = input.rows();
                    let mut g = Matrix::zeros(n, input.cols());
                    for r in 0..n {
                        for c in 0..input.cols() {
                            g.set(r, c, upstream.get(c, 0) / n as f64);
                        }
                    }
                    accumulate(&mut grads, *a, g)?;
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.value(*a).rows();
                    let cols = upstream.cols();
                    let (top, bottom) = upstream.data().split_at(ra * cols);
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, Matrix::new(ra, cols, top.to_vec())?)?;
                    }
                    if self.needs(*b) {
                        let rb = self.value(*b).rows();
                        accumulate(&mut grads, *b, Matrix::new(rb, cols, bottom.to_vec())?)?;
                    }
                }
                Op::SoftmaxCe {
                    logits,
                    target,
                    probs,
                } => {
                    let u = upstream.get(0, 0);
                    let shape = self.value(*logits).shape();
                    let data = probs
                        .iter()
                        .enumerate()
                        .map(|(i, p)| u * (p - if i == *target { 1.0 } else { 0.0 }))
                        .collect();
                    accumulate(&mut grads, *logits, Matrix::new(shape.0, shape.1, data)?)?;
                }
            }
        }

        let shapes = self.records.iter().map(|r| r.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: TensorId, g: Matrix) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradients produced by [`Tape::backward`]. Only leaves keep their
/// gradient; intermediate slots are consumed during the pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of `id`, or an all-zero matrix if no path reached it.
    pub fn get(&self, id: TensorId) -> Matrix {
        match self.grads.get(id.0) {
            Some(Some(g)) => g.clone(),
            _ => {
                let (r, c) = self.shapes.get(id.0).copied().unwrap_or((0, 0));
                Matrix::zeros(r, c)
            }
        }
    }

    /// Moves the gradient out, zero if unreached.
    pub fn take(&mut self, id: TensorId) -> Matrix {
        match self.grads.get_mut(id.0).and_then(Option::take) {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes.get(id.0).copied().unwrap_or((0, 0));
                Matrix::zeros(r, c)
            }
        }
    }
}

/// Numerically stable `-log softmax(logits)[target]`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    ce_with_probs(logits, target).map(|(loss, _)| loss)
}

/// Softmax probabilities with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn ce_with_probs(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::Index {
            what: "logits",
            index: target,
            len: logits.len(),
        });
    }
    if !logits.iter().all(|l| l.is_finite()) {
        // let the caller see a NaN loss and decide; training names the tensor
        return Ok((f64::NAN, vec![f64::NAN; logits.len()]));
    }
    // The arg-max term contributes exactly 1 to the shifted partition sum;
    // ln_1p over the remainder keeps tiny losses accurate.
    let (arg, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, l)| if l > best.1 { (i, l) } else { best });
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &l)| (l - max).exp())
        .sum();
    let log_z_shifted = rest.ln_1p();
    let probs = logits
        .iter()
        .map(|&l| (l - max - log_z_shifted).exp())
        .collect();
    Ok(((max - logits[target]) + log_z_shifted, probs))
}
