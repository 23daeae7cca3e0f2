//! Low-resource machine translation development pipeline.
//!
//! The crate covers the data side (corpus ingestion, cleaning and mixing,
//! synthetic pair generation), orchestration of staged training over an
//! abstract trainer backend, automatic metrics (BLEU, ChrF, TER/HTER) and
//! aggregation of human evaluation data.

pub mod corpus;
pub mod humaneval;
pub mod metrics;
pub mod mixer;
pub mod rng;
pub mod synth;
pub mod trainpipe;

pub use corpus::{Corpus, CorpusStats, Format, LoadOptions, Provenance, SegmentPair};
pub use mixer::{CleanReport, MixtureSpec, Workspace};
