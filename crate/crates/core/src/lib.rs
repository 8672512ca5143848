//! Contrastive transfer learning for named entity recognition.
//!
//! A small tagger is pretrained on a labeled source domain with a cross-entropy
//! objective plus a refined multi-similarity term, where pair weights are
//! modulated by auxiliary similarities derived from the events each entity
//! takes part in. It is then finetuned on a few-shot target domain with a
//! multi-similarity term that separates gold target entities from
//! pseudo-labeled entities the pretrained model detects in target text.
//!
//! Module map:
//!
//! - [`corpus`]: documents, CoNLL and standoff ingestion, few-shot sampling,
//!   synthetic corpora.
//! - [`embedder`]: embedding providers and the concatenation / template event
//!   embeddings.
//! - [`similarity`]: cosine similarity and the auxiliary similarity cache.
//! - [`losses`]: cross-entropy, pair mining, MS and RMS losses.
//! - [`model`]: the windowed feed-forward tagger, AdamW, checkpoints.
//! - [`pipeline`]: pretraining, pseudo labeling, finetuning, evaluation and
//!   experiment orchestration.

pub mod corpus;
pub mod embedder;
mod error;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod similarity;

pub use error::{Error, Result};
