//! Text encoders and the two event-embedding schemes.
//!
//! Concatenation embeds each of five slots of an event separately and joins
//! the blocks; nested events are folded in through [`compress`], absent slots
//! through seeded Gaussian padding. The template scheme fills a natural
//! language template per event type and encodes the resulting sentence.

mod concat;
mod provider;
mod sets;
mod template;

pub use concat::{
    compress, embed_event_concat, event_type_text, lookup_in, pad_state_for, slot_fillers,
    slot_texts, EventLookup, PadState, Slot, SlotFiller, K, MAX_DEPTH,
};
pub use provider::{hash_encode, seeded_hash, EmbeddingProvider};
pub use sets::{
    build_embedding_sets, EmbeddingMode, EmbeddingSets, EmbeddingSetsFile, EventEmbedding,
};
pub use template::{embed_event_template, TemplateSet, FALLBACK_TEMPLATE, PLACEHOLDERS};
