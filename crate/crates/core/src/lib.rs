//! Offline analysis of spoken-language-model adapter representations.
//!
//! The crate maps adapter (and encoder) output frames onto their nearest
//! language-model tokens, classifies every ground-truth word as transcribed,
//! translated, semantically represented, transliterated or unclear, and ships
//! the supporting evaluations: linear probes, spoken STS and WER scoring.
//!
//! Module map:
//!
//! * [`interchange`] - tensor files, vocabulary sidecars, utterance records, corpus manifests
//! * [`neighbor`] - mean-centred cosine nearest-token search
//! * [`align`] - frame/word/phone interval assignment and span pooling
//! * [`providers`] - language ID, translation, word alignment and G2P backends with a persistent cache
//! * [`verdict`] - token language aggregation and the per-word verdict ladder
//! * [`probes`] - linear probes, Spearman correlation, spoken STS
//! * [`asr`] - WER and language-match rate
//! * [`report`] - distribution reports and their serializations
//! * [`analysis`] - corpus-level orchestration of the token analysis

pub mod align;
pub mod analysis;
pub mod asr;
pub mod interchange;
pub mod neighbor;
pub mod probes;
pub mod providers;
pub mod report;
pub mod verdict;

pub use interchange::{
    CorpusManifest, EmbeddingMatrix, RepresentationSequence, Stage, UtteranceRecord,
};
pub use neighbor::{FrameAssignment, NeighborAssignment};
pub use report::DistributionReport;
pub use verdict::{Verdict, VerdictConfig, WordVerdict};
