//! In-batch softmax cross-entropy and its analytic gradients.

use std::collections::BTreeMap;

use crate::matrix::DenseMatrix;
use crate::scalar::{dot, Scalar};

use super::{DualEncoderModel, EncoderError, Forward};

/// Parameter gradients for one batch. Token rows are sparse (only the rows
/// touched by the batch); a BTreeMap keeps every traversal deterministic.
#[derive(Debug, Clone)]
pub struct ModelGradients<S> {
    pub token_rows: BTreeMap<u32, Vec<S>>,
    pub projection: DenseMatrix<S>,
}

impl<S: Scalar> ModelGradients<S> {
    pub fn zeros(hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            token_rows: BTreeMap::new(),
            projection: DenseMatrix::zeros(hidden_dim, output_dim),
        }
    }
}

/// Softmax cross-entropy with diagonal targets over a square score matrix:
/// `loss = -(1/B) sum_i log softmax_j(s_ij)[i]`. Returns the loss and
/// dL/ds. Rows are log-sum-exp stabilized.
pub fn softmax_ce_diag<S: Scalar>(scores: &DenseMatrix<S>) -> (S, DenseMatrix<S>) {
    let b = scores.rows();
    assert_eq!(b, scores.cols(), "score matrix must be square");
    let inv_b = S::one() / S::from_usize(b).expect("batch fits scalar");
    let mut grad = DenseMatrix::zeros(b, b);
    let mut loss = S::zero();
    for i in 0..b {
        let row = scores.row(i);
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut denom = S::zero();
        for s in row {
            denom += (*s - max).exp();
        }
        let log_denom = denom.ln();
        loss += -(row[i] - max - log_denom);
        for j in 0..b {
            let p = (row[j] - max).exp() / denom;
            let delta = if i == j { S::one() } else { S::zero() };
            grad.set(i, j, (p - delta) * inv_b);
        }
    }
    (loss * inv_b, grad)
}

/// In-batch negatives loss over (query, document) text pairs:
/// `s_ij = <encode(q_i), encode(d_j)> / temperature`, cross-entropy against
/// the diagonal. Returns the loss and gradients for every parameter.
///
/// The caller is responsible for batches of at least 2 with distinct
/// documents; a non-finite loss is an error carrying diagnostics.
pub fn inbatch_loss<S: Scalar>(
    model: &DualEncoderModel<S>,
    batch: &[(&str, &str)],
    temperature: S,
) -> Result<(S, ModelGradients<S>), EncoderError> {
    let b = batch.len();
    if b < 2 {
        return Err(EncoderError::BatchTooSmall(b));
    }

    let query_feats: Vec<Vec<(u32, S)>> = batch
        .iter()
        .map(|(q, _)| model.featurizer().features::<S>(q))
        .collect();
    let doc_feats: Vec<Vec<(u32, S)>> = batch
        .iter()
        .map(|(_, d)| model.featurizer().features::<S>(d))
        .collect();
    let query_fwd: Vec<Forward<S>> = query_feats.iter().map(|f| model.forward(f)).collect();
    let doc_fwd: Vec<Forward<S>> = doc_feats.iter().map(|f| model.forward(f)).collect();

    let mut scores = DenseMatrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            scores.set(i, j, dot(&query_fwd[i].output, &doc_fwd[j].output) / temperature);
        }
    }

    let (loss, grad_scores) = softmax_ce_diag(&scores);
    if !loss.is_finite() {
        return Err(EncoderError::NonFiniteLoss {
            step: 0,
            diagnostics: format!(
                "loss {loss}; first scores row {:?}",
                scores.row(0).iter().map(|s| s.to_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>()
            ),
        });
    }

    // dL/d q_i = sum_j g_ij * d_j / T ; dL/d d_j = sum_i g_ij * q_i / T.
    let dim = model.output_dim();
    let mut grads = ModelGradients::zeros(model.hidden_dim(), dim);
    for i in 0..b {
        let mut grad_q = vec![S::zero(); dim];
        for j in 0..b {
            let g = grad_scores.get(i, j) / temperature;
            if g.is_zero() {
                continue;
            }
            for (slot, d) in grad_q.iter_mut().zip(doc_fwd[j].output.iter()) {
                *slot += g * *d;
            }
        }
        model.backward(&query_feats[i], &query_fwd[i], &grad_q, &mut grads);
    }
    for j in 0..b {
        let mut grad_d = vec![S::zero(); dim];
        for i in 0..b {
            let g = grad_scores.get(i, j) / temperature;
            if g.is_zero() {
                continue;
            }
            for (slot, q) in grad_d.iter_mut().zip(query_fwd[i].output.iter()) {
                *slot += g * *q;
            }
        }
        model.backward(&doc_feats[j], &doc_fwd[j], &grad_d, &mut grads);
    }

    Ok((loss, grads))
}
