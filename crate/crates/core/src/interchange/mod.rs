//! File contracts between the model-hosting side and the analysis toolkit.
//!
//! Tensors travel in a small fixed-header binary format (`MALENS01`),
//! vocabularies in a JSON sidecar next to the matrix, and utterance records
//! and corpus manifests as JSON documents. Every loader validates the
//! invariants of the value it produces; values are immutable afterwards.

mod corpus;
mod record;
mod tensor;

use std::path::PathBuf;

use thiserror::Error;

pub use corpus::{load_corpus, Corpus, CorpusManifest, LoadedUtterance, ManifestEntry};
pub use record::{AlignedTranslation, PhoneSpan, UtteranceRecord, WordSpan, SPAN_TOLERANCE_MS};
pub use tensor::{
    expected_frame_count, load_embedding_matrix, load_representation_sequence, vocab_sidecar_path,
    EmbeddingMatrix, RepresentationSequence, Stage, MAGIC,
};

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}: not an interchange file (bad magic)")]
    BadMagic(PathBuf),
    #[error("{path}: expected tensor kind {expected}, found {found}")]
    BadKind {
        path: PathBuf,
        expected: u8,
        found: u8,
    },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("payload is {found} bytes but the header declares {expected}")]
    ShapeMismatch { expected: u64, found: u64 },
    #[error("vocabulary has {found} tokens but the matrix has {expected} rows")]
    VocabMismatch { expected: usize, found: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("frame duration must be positive")]
    ZeroFrameDuration,
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error(
        "utterance {utterance_id}: language {found} does not match corpus language {expected}"
    )]
    LanguageMismatch {
        utterance_id: String,
        expected: String,
        found: String,
    },
    #[error("utterance {utterance_id}: {reason}")]
    InvariantViolation {
        utterance_id: String,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, InterchangeError>;

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            InterchangeError::MissingFile(path.to_path_buf())
        } else {
            InterchangeError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|source| InterchangeError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| InterchangeError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|source| InterchangeError::Io {
        path: path.to_path_buf(),
        source,
    })
}
