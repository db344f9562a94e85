//! Trainable dual encoder.
//!
//! Texts are featurized as hashed n-gram count vectors, embedded through a
//! token-embedding table, mean-pooled (the L1 feature normalization makes
//! the gather a weighted mean), and projected to a fixed output dimension.
//! One parameter set is shared between the query and document sides.

mod checkpoint;
mod featurizer;
mod loss;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::matrix::DenseMatrix;
use crate::scalar::{l2_normalize, Scalar};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use featurizer::{Featurizer, DEFAULT_HASH_SPACE};
pub use loss::{inbatch_loss, softmax_ce_diag, ModelGradients};
pub use train::{
    finetune, pretrain, train_schedule, CropConfig, OptState, TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("batch size must be at least 2 for in-batch negatives, got {0}")]
    BatchTooSmall(usize),
    #[error("need at least {need} training pairs, got {have}")]
    TooFewPairs { have: usize, need: usize },
    #[error("fewer than 2 documents have at least {min_tokens} tokens; cannot form crop batches")]
    AllDocsTooShort { min_tokens: usize },
    #[error("training pairs reference fewer than 2 distinct documents")]
    TooFewDistinctDocs,
    #[error("pair references unknown doc id {0:?}")]
    MissingDoc(String),
    #[error("non-finite loss at step {step}: {diagnostics}")]
    NonFiniteLoss { step: usize, diagnostics: String },
    #[error("invalid crop config: min {min} must satisfy 1 <= min <= max {max}")]
    BadCropConfig { min: usize, max: usize },
    #[error("checkpoint {path}: {reason}")]
    BadCheckpoint { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Shared-parameter dual encoder: token-embedding table plus projection.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoderModel<S> {
    featurizer: Featurizer,
    /// hash_space x hidden_dim
    token_embedding: DenseMatrix<S>,
    /// hidden_dim x output_dim
    projection: DenseMatrix<S>,
    normalize: bool,
}

impl<S: Scalar> DualEncoderModel<S> {
    /// Random initialization: token embeddings ~ N(0,1), projection
    /// ~ N(0, 1/sqrt(hidden)). Deterministic for a fixed seed.
    pub fn init(
        featurizer: Featurizer,
        hidden_dim: usize,
        output_dim: usize,
        normalize: bool,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let token_normal = Normal::new(0.0f64, 1.0).expect("valid normal");
        let proj_normal =
            Normal::new(0.0f64, 1.0 / (hidden_dim as f64).sqrt()).expect("valid normal");
        let hash_space = featurizer.hash_space as usize;
        let mut token = DenseMatrix::zeros(hash_space, hidden_dim);
        for v in token.as_mut_slice() {
            *v = S::from_f64_lossy(token_normal.sample(&mut rng));
        }
        let mut projection = DenseMatrix::zeros(hidden_dim, output_dim);
        for v in projection.as_mut_slice() {
            *v = S::from_f64_lossy(proj_normal.sample(&mut rng));
        }
        Self {
            featurizer,
            token_embedding: token,
            projection,
            normalize,
        }
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn hidden_dim(&self) -> usize {
        self.token_embedding.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn token_embedding(&self) -> &DenseMatrix<S> {
        &self.token_embedding
    }

    pub fn projection(&self) -> &DenseMatrix<S> {
        &self.projection
    }

    pub fn is_finite(&self) -> bool {
        self.token_embedding.is_finite() && self.projection.is_finite()
    }

    /// Embeds a text. Empty text maps to the zero vector (the projection of
    /// the zero pooled vector; normalization leaves zero untouched).
    pub fn encode(&self, text: &str) -> Vec<S> {
        let feats = self.featurizer.features::<S>(text);
        self.forward(&feats).output
    }

    pub(crate) fn forward(&self, feats: &[(u32, S)]) -> Forward<S> {
        let hidden_dim = self.hidden_dim();
        let output_dim = self.output_dim();
        let mut hidden = vec![S::zero(); hidden_dim];
        for (bucket, weight) in feats {
            let row = self.token_embedding.row(*bucket as usize);
            for (h, e) in hidden.iter_mut().zip(row.iter()) {
                *h += *weight * *e;
            }
        }
        let mut raw = vec![S::zero(); output_dim];
        for (j, h) in hidden.iter().enumerate() {
            if h.is_zero() {
                continue;
            }
            let row = self.projection.row(j);
            for (r, p) in raw.iter_mut().zip(row.iter()) {
                *r += *h * *p;
            }
        }
        let mut output = raw.clone();
        if self.normalize {
            l2_normalize(&mut output);
        }
        Forward {
            hidden,
            raw,
            output,
        }
    }

    /// Accumulates parameter gradients for one text given dL/d(output).
    pub(crate) fn backward(
        &self,
        feats: &[(u32, S)],
        fwd: &Forward<S>,
        grad_output: &[S],
        grads: &mut ModelGradients<S>,
    ) {
        let output_dim = self.output_dim();
        let hidden_dim = self.hidden_dim();

        // Through L2 normalization: dL/dy = (g - z (z . g)) / ||y||.
        let mut grad_raw = vec![S::zero(); output_dim];
        if self.normalize {
            let norm = crate::scalar::l2_norm(&fwd.raw);
            if norm > S::zero() {
                let zdotg = crate::scalar::dot(&fwd.output, grad_output);
                for o in 0..output_dim {
                    grad_raw[o] = (grad_output[o] - fwd.output[o] * zdotg) / norm;
                }
            }
            // Zero raw vector: treat the gradient as zero (subgradient choice).
        } else {
            grad_raw.copy_from_slice(grad_output);
        }

        // Projection: dL/dP[j][o] += h[j] * dL/dy[o].
        for j in 0..hidden_dim {
            let h = fwd.hidden[j];
            if h.is_zero() {
                continue;
            }
            let row = grads.projection.row_mut(j);
            for (slot, g) in row.iter_mut().zip(grad_raw.iter()) {
                *slot += h * *g;
            }
        }

        // Hidden: dL/dh[j] = sum_o P[j][o] * dL/dy[o].
        let mut grad_hidden = vec![S::zero(); hidden_dim];
        for j in 0..hidden_dim {
            grad_hidden[j] = crate::scalar::dot(self.projection.row(j), &grad_raw);
        }

        // Token rows: dL/dE[f] += x_f * dL/dh.
        for (bucket, weight) in feats {
            let row = grads
                .token_rows
                .entry(*bucket)
                .or_insert_with(|| vec![S::zero(); hidden_dim]);
            for (slot, g) in row.iter_mut().zip(grad_hidden.iter()) {
                *slot += *weight * *g;
            }
        }
    }

    pub(crate) fn token_embedding_mut(&mut self) -> &mut DenseMatrix<S> {
        &mut self.token_embedding
    }

    pub(crate) fn projection_mut(&mut self) -> &mut DenseMatrix<S> {
        &mut self.projection
    }

    pub(crate) fn from_parts(
        featurizer: Featurizer,
        token_embedding: DenseMatrix<S>,
        projection: DenseMatrix<S>,
        normalize: bool,
    ) -> Self {
        Self {
            featurizer,
            token_embedding,
            projection,
            normalize,
        }
    }

    /// SHA-256 of the serialized checkpoint bytes; identifies the exact
    /// weights an index was built with.
    pub fn fingerprint(&self) -> String {
        let bytes = checkpoint::to_bytes(self);
        crate::hash::sha256_hex(&bytes)
    }
}

/// Cached activations from one forward pass.
pub(crate) struct Forward<S> {
    pub hidden: Vec<S>,
    pub raw: Vec<S>,
    pub output: Vec<S>,
}
