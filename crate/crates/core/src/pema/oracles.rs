//! Small exact checks behind the Fisher and damping steps.

use crate::error::{Error, Result};
use crate::numerics::{softmax, symmetric_eigenvalues, Matrix, Tape};

/// Largest categorical model the Fisher oracle will enumerate.
pub const MAX_ENUMERATED_CLASSES: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct FisherReport {
    /// Diagonal of `E[s s^T]`.
    pub fisher_diag: Vec<f64>,
    /// Diagonal of `-E[Hessian of log p]`.
    pub neg_hessian_diag: Vec<f64>,
    pub max_abs_diff: f64,
    /// `max_i |E[s_i]|`.
    pub max_abs_score_mean: f64,
}

/// Categorical model with its logits as parameters. Enumerates every outcome
/// `y`, taking the score `d log p_y / d logits` from the gradient tape and
/// the Hessian of `log p_y` from its closed form `-(diag(p) - p p^T)`.
pub fn fisher_equals_neg_hessian_oracle(logits: &[f64]) -> Result<FisherReport> {
    let k = logits.len();
    if k < 2 {
        return Err(Error::validation("need at least two classes"));
    }
    if k > MAX_ENUMERATED_CLASSES {
        return Err(Error::Refused(format!(
            "{k} outcomes exceed the enumeration limit of {MAX_ENUMERATED_CLASSES}"
        )));
    }
    let p = softmax(logits);
    let theta = Matrix::column(logits.to_vec());
    let mut fisher = vec![0.0; k];
    let mut score_mean = vec![0.0; k];
    let mut neg_hessian = vec![0.0; k];
    for y in 0..k {
        let mut tape = Tape::new();
        let l = tape.param(&theta);
        let nll = tape.softmax_ce(l, y)?;
        let grads = tape.backward(nll)?;
        // score of log p_y is minus the gradient of the negative log-likelihood
        let score = grads.get(l).scale(-1.0);
        for i in 0..k {
            let s = score.get(i, 0);
            fisher[i] += p[y] * s * s;
            score_mean[i] += p[y] * s;
            let hess_ii = -(p[i] - p[i] * p[i]);
            neg_hessian[i] -= p[y] * hess_ii;
        }
    }
    let max_abs_diff = fisher
        .iter()
        .zip(&neg_hessian)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let max_abs_score_mean = score_mean.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(FisherReport {
        fisher_diag: fisher,
        neg_hessian_diag: neg_hessian,
        max_abs_diff,
        max_abs_score_mean,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DampingReport {
    /// Eigenvalues of `H + λI`, ascending.
    pub shifted: Vec<f64>,
    /// Eigenvalues of `H` plus `λ`, ascending.
    pub expected: Vec<f64>,
    pub max_abs_diff: f64,
    /// Smallest eigenvalue of `H^T H + λI`.
    pub min_gram_eig: f64,
}

/// Eigen-decomposition check of the damping step on a symmetric matrix.
pub fn damping_eigen_oracle(h: &Matrix, lambda: f64) -> Result<DampingReport> {
    if !(lambda > 0.0) {
        return Err(Error::config("damping must be positive"));
    }
    let n = h.rows();
    let eye = Matrix::identity(n).scale(lambda);
    let shifted = symmetric_eigenvalues(&h.add(&eye)?)?;
    let expected: Vec<f64> = symmetric_eigenvalues(h)?.into_iter().map(|m| m + lambda).collect();
    let max_abs_diff = shifted
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let gram = h.t_matmul(h)?.add(&eye)?;
    // t_matmul sums in a different order for (i, j) and (j, i); symmetrize
    let gram = gram.add(&gram.transpose())?.scale(0.5);
    let min_gram_eig = symmetric_eigenvalues(&gram)?[0];
    Ok(DampingReport {
        shifted,
        expected,
        max_abs_diff,
        min_gram_eig,
    })
}
