//! Streaming corpus-construction toolkit for low-resource pretraining data.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`text`] — sentence records, whitespace tokenization and line normalization.
//! * [`ingest`] — plain and bitext readers plus seeded, quota-exact corpus splitting.
//! * [`filters`] — the five sentence-quality filters (non-Latin ratio, length,
//!   punctuation runs, average word length, HTML/URL tokens).
//! * [`dedup`] — keep-first exact deduplication, in memory or via external sort.
//! * [`bpe`] — cased BPE vocabulary learning, encoding and decoding.
//! * [`bench`] — tweet normalization, Dengue label packing and NLI pair generation.
//! * [`pipeline`] — declarative end-to-end build with per-stage statistics.

pub mod bench;
pub mod bpe;
pub mod dedup;
mod error;
pub mod filters;
pub mod ingest;
pub mod pipeline;
pub mod text;

pub use error::{CorpusError, Result};
pub use text::{normalize_line, tokenize_ws, SentenceRecord, Token};
