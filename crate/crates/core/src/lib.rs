//! queryforge: turn a handful of annotated (query, document) examples into a
//! task-specific retriever.
//!
//! The pipeline: prompt-based synthetic query generation against a
//! completion backend, round-trip consistency filtering of the generated
//! pairs, contrastive dual-encoder training (independent-cropping
//! pretraining plus in-batch softmax fine-tuning), exact inner-product
//! retrieval, a cross-scoring reranker over the retriever's top candidates,
//! and TREC-style nDCG evaluation with a few-shot exclusion rule.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! pipeline instantiates `f32` so checkpoints round-trip exactly through
//! the 32-bit on-disk format.

pub mod corpus;
pub mod encoder;
pub mod hash;
pub mod matrix;
pub mod promptgen;
pub mod retrieval;
pub mod scalar;
pub mod text;

pub use scalar::Scalar;
