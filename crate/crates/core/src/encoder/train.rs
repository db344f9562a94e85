//! Training loops: independent-cropping contrastive pretraining and
//! in-batch-softmax fine-tuning on synthetic pairs, with SGD + momentum.

use std::collections::{BTreeMap, HashSet};
use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusSizeClass, Document};
use crate::hash::derive_seed;
use crate::matrix::DenseMatrix;
use crate::promptgen::SyntheticPair;
use crate::scalar::Scalar;
use crate::text::word_tokens;

use super::{inbatch_loss, DualEncoderModel, EncoderError, ModelGradients};

/// Hyperparameters for one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub rng_seed: u64,
    pub loss_temperature: f64,
    pub normalize_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // Desk-scale defaults; paper-scale numbers come from train_schedule.
        Self {
            batch_size: 64,
            steps: 300,
            learning_rate: 0.5,
            momentum: 0.9,
            rng_seed: 0,
            loss_temperature: 1.0,
            normalize_embeddings: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.batch_size < 2 {
            return Err(EncoderError::BatchTooSmall(self.batch_size));
        }
        Ok(())
    }

    /// Linearly scales batch size and step count, flooring at the smallest
    /// usable values (batch 2, steps 1).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.batch_size = (((self.batch_size as f64) * factor).floor() as usize).max(2);
        out.steps = (((self.steps as f64) * factor).floor() as usize).max(1);
        out
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.rng_seed = seed;
        out
    }
}

/// Batch size and step count by corpus size: small corpora train with batch
/// 128, larger ones with 6k; only large corpora get 5k steps.
pub fn train_schedule(size_class: CorpusSizeClass) -> TrainConfig {
    let (batch_size, steps) = match size_class {
        CorpusSizeClass::Small => (128, 1_000),
        CorpusSizeClass::Medium => (6_000, 1_000),
        CorpusSizeClass::Large => (6_000, 5_000),
    };
    TrainConfig {
        batch_size,
        steps,
        ..TrainConfig::default()
    }
}

/// Crop length bounds (in word tokens) for independent-cropping pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropConfig {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            min_len: 8,
            max_len: 64,
        }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.min_len < 1 || self.min_len > self.max_len {
            return Err(EncoderError::BadCropConfig {
                min: self.min_len,
                max: self.max_len,
            });
        }
        Ok(())
    }
}

/// Momentum buffers. Token-row velocities are kept sparsely for the rows
/// that have been touched.
#[derive(Debug, Clone)]
pub struct OptState<S> {
    velocity_token: BTreeMap<u32, Vec<S>>,
    velocity_projection: DenseMatrix<S>,
    momentum: S,
    hidden_dim: usize,
}

impl<S: Scalar> OptState<S> {
    pub fn new(model: &DualEncoderModel<S>, momentum: f64) -> Self {
        Self {
            velocity_token: BTreeMap::new(),
            velocity_projection: DenseMatrix::zeros(model.hidden_dim(), model.output_dim()),
            momentum: S::from_f64_lossy(momentum),
            hidden_dim: model.hidden_dim(),
        }
    }

    /// One SGD-with-momentum step: v = mu*v + g; w -= lr*v.
    pub fn apply(
        &mut self,
        model: &mut DualEncoderModel<S>,
        grads: &ModelGradients<S>,
        learning_rate: f64,
    ) {
        let lr = S::from_f64_lossy(learning_rate);
        let mu = self.momentum;
        for (&row, grad) in &grads.token_rows {
            let vel = self
                .velocity_token
                .entry(row)
                .or_insert_with(|| vec![S::zero(); self.hidden_dim]);
            let weights = model.token_embedding_mut().row_mut(row as usize);
            for j in 0..grad.len() {
                vel[j] = mu * vel[j] + grad[j];
                weights[j] = weights[j] - lr * vel[j];
            }
        }
        let vel = self.velocity_projection.as_mut_slice();
        let grad = grads.projection.as_slice();
        let weights = model.projection_mut().as_mut_slice();
        for j in 0..grad.len() {
            vel[j] = mu * vel[j] + grad[j];
            weights[j] = weights[j] - lr * vel[j];
        }
    }
}

/// A trained model plus its per-step loss trajectory.
pub struct TrainOutcome<S> {
    pub model: DualEncoderModel<S>,
    pub losses: Vec<S>,
}

fn crop(tokens: &[String], config: &CropConfig, rng: &mut ChaCha20Rng) -> String {
    let len = rng
        .gen_range(config.min_len..=config.max_len)
        .min(tokens.len());
    let start = rng.gen_range(0..=tokens.len() - len);
    tokens[start..start + len].join(" ")
}

/// Contrastive pretraining: each step draws a batch of documents and two
/// independent uniform-length, uniform-position crops per document, treating
/// the crop pairs as positives under the in-batch loss.
///
/// Documents shorter than `2 * min_len` tokens are skipped; it is an error
/// if fewer than two documents remain.
pub fn pretrain<S: Scalar>(
    model: DualEncoderModel<S>,
    corpus: &[Document],
    crop_config: &CropConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome<S>, EncoderError> {
    crop_config.validate()?;
    config.validate()?;

    let tokenized: Vec<Vec<String>> = corpus
        .iter()
        .map(|d| word_tokens(&d.full_text()))
        .filter(|t| t.len() >= 2 * crop_config.min_len)
        .collect();
    if tokenized.len() < 2 {
        return Err(EncoderError::AllDocsTooShort {
            min_tokens: 2 * crop_config.min_len,
        });
    }

    let batch_size = config.batch_size.min(tokenized.len());
    let mut rng = ChaCha20Rng::seed_from_u64(config.rng_seed);
    let mut model = model;
    let mut opt = OptState::new(&model, config.momentum);
    let temperature = S::from_f64_lossy(config.loss_temperature);
    let mut losses = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let chosen = rand::seq::index::sample(&mut rng, tokenized.len(), batch_size);
        let mut batch_texts: Vec<(String, String)> = Vec::with_capacity(batch_size);
        for idx in chosen.iter() {
            let tokens = &tokenized[idx];
            let a = crop(tokens, crop_config, &mut rng);
            let b = crop(tokens, crop_config, &mut rng);
            batch_texts.push((a, b));
        }
        let batch: Vec<(&str, &str)> = batch_texts
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect();
        let (loss, grads) = inbatch_loss(&model, &batch, temperature).map_err(|e| match e {
            EncoderError::NonFiniteLoss { diagnostics, .. } => {
                EncoderError::NonFiniteLoss { step, diagnostics }
            }
            other => other,
        })?;
        opt.apply(&mut model, &grads, config.learning_rate);
        if step % 50 == 0 {
            log::debug!("pretrain step {step}: loss {loss}");
        }
        losses.push(loss);
    }
    Ok(TrainOutcome { model, losses })
}

/// Deterministic distinct-document batches for one epoch: pairs are
/// shuffled, then scanned greedily; a pair whose document already sits in
/// the open batch is pushed back for the next one. The tail that cannot
/// fill a complete batch is dropped for the epoch (it reappears after the
/// next shuffle).
fn epoch_batches(
    doc_of_pair: &[usize],
    batch_size: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..doc_of_pair.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(rng);

    let mut remaining: VecDeque<usize> = order.into();
    let mut batches = Vec::new();
    loop {
        let mut batch = Vec::with_capacity(batch_size);
        let mut seen = HashSet::new();
        let mut rest = VecDeque::with_capacity(remaining.len());
        for idx in remaining.drain(..) {
            if batch.len() < batch_size && seen.insert(doc_of_pair[idx]) {
                batch.push(idx);
            } else {
                rest.push_back(idx);
            }
        }
        if batch.len() < batch_size {
            return batches;
        }
        batches.push(batch);
        remaining = rest;
    }
}

/// Fine-tunes on synthetic (query, document) pairs with in-batch negatives.
/// Batches never contain two pairs with the same source document.
pub fn finetune<S: Scalar>(
    model: DualEncoderModel<S>,
    pairs: &[SyntheticPair],
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<TrainOutcome<S>, EncoderError> {
    config.validate()?;
    if pairs.len() < config.batch_size {
        return Err(EncoderError::TooFewPairs {
            have: pairs.len(),
            need: config.batch_size,
        });
    }
    let mut doc_index: Vec<usize> = Vec::with_capacity(pairs.len());
    let mut doc_texts: Vec<String> = Vec::new();
    let mut doc_slot: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for pair in pairs {
        let slot = match doc_slot.get(pair.doc_id.as_str()) {
            Some(s) => *s,
            None => {
                let doc = corpus
                    .get(&pair.doc_id)
                    .ok_or_else(|| EncoderError::MissingDoc(pair.doc_id.clone()))?;
                doc_texts.push(doc.full_text());
                doc_slot.insert(pair.doc_id.as_str(), doc_texts.len() - 1);
                doc_texts.len() - 1
            }
        };
        doc_index.push(slot);
    }
    let distinct_docs = doc_texts.len();
    if distinct_docs < 2 {
        return Err(EncoderError::TooFewDistinctDocs);
    }
    let batch_size = config.batch_size.min(distinct_docs);

    let mut model = model;
    let mut opt = OptState::new(&model, config.momentum);
    let temperature = S::from_f64_lossy(config.loss_temperature);
    let mut losses = Vec::with_capacity(config.steps);
    let mut step = 0usize;
    let mut epoch = 0u64;

    while step < config.steps {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(config.rng_seed, &format!("epoch-{epoch}")));
        let batches = epoch_batches(&doc_index, batch_size, &mut rng);
        debug_assert!(!batches.is_empty());
        for batch_ids in batches {
            if step >= config.steps {
                break;
            }
            let batch: Vec<(&str, &str)> = batch_ids
                .iter()
                .map(|&i| (pairs[i].query.as_str(), doc_texts[doc_index[i]].as_str()))
                .collect();
            let (loss, grads) = inbatch_loss(&model, &batch, temperature).map_err(|e| match e {
                EncoderError::NonFiniteLoss { diagnostics, .. } => {
                    EncoderError::NonFiniteLoss { step, diagnostics }
                }
                other => other,
            })?;
            opt.apply(&mut model, &grads, config.learning_rate);
            if step % 50 == 0 {
                log::debug!("finetune step {step}: loss {loss}");
            }
            losses.push(loss);
            step += 1;
        }
        epoch += 1;
    }
    Ok(TrainOutcome { model, losses })
}
