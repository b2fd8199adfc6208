use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_file, read_json, write_json, InterchangeError, Result};

/// Leading bytes of every tensor file.
pub const MAGIC: &[u8; 8] = b"MALENS01";

const KIND_MATRIX: u8 = 1;
const KIND_SEQUENCE: u8 = 2;

const MATRIX_HEADER_LEN: usize = 8 + 1 + 8 + 8;
const SEQUENCE_HEADER_LEN: usize = 8 + 1 + 8 + 8 + 4 + 1;

/// Model stage a representation sequence was tapped from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    EncoderOutput,
    AdapterOutput,
}

impl Stage {
    fn code(self) -> u8 {
        match self {
            Stage::EncoderOutput => 1,
            Stage::AdapterOutput => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Stage::EncoderOutput),
            2 => Ok(Stage::AdapterOutput),
            other => Err(InterchangeError::InvalidHeader(format!(
                "unknown stage code {other}"
            ))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::EncoderOutput => "EncoderOutput",
            Stage::AdapterOutput => "AdapterOutput",
        })
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "EncoderOutput" | "encoder" => Ok(Stage::EncoderOutput),
            "AdapterOutput" | "adapter" => Ok(Stage::AdapterOutput),
            other => Err(format!("unknown stage {other:?}")),
        }
    }
}

/// The language model's token-embedding table plus its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    rows: Vec<f32>,
    tokens: Vec<String>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major values; `rows.len()` must equal `tokens.len() * dim`.
    pub fn new(dim: usize, rows: Vec<f32>, tokens: Vec<String>) -> Result<Self> {
        if dim == 0 {
            return Err(InterchangeError::InvalidHeader(
                "dim must be positive".into(),
            ));
        }
        if rows.len() % dim != 0 {
            return Err(InterchangeError::ShapeMismatch {
                expected: (rows.len() / dim * dim) as u64 * 4,
                found: rows.len() as u64 * 4,
            });
        }
        let vocab_size = rows.len() / dim;
        if tokens.len() != vocab_size {
            return Err(InterchangeError::VocabMismatch {
                expected: vocab_size,
                found: tokens.len(),
            });
        }
        if vocab_size < 2 {
            return Err(InterchangeError::InvalidHeader(format!(
                "vocab_size must be at least 2, got {vocab_size}"
            )));
        }
        check_finite(&rows)?;
        Ok(Self { dim, rows, tokens })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.rows[index * self.dim..(index + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.rows.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f32] {
        &self.rows
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MATRIX_HEADER_LEN + self.rows.len() * 4);
        out.extend_from_slice(MAGIC);
        out.push(KIND_MATRIX);
        out.extend_from_slice(&(self.vocab_size() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        push_payload(&mut out, &self.rows);
        out
    }

    /// Parses the tensor half of a matrix file; `tokens` comes from the sidecar.
    pub fn from_bytes(bytes: &[u8], tokens: Vec<String>) -> Result<Self> {
        let body = check_prefix(bytes, KIND_MATRIX, Path::new("<memory>"))?;
        if bytes.len() < MATRIX_HEADER_LEN {
            return Err(InterchangeError::InvalidHeader(
                "truncated matrix header".into(),
            ));
        }
        let vocab_size = read_u64(body, 0);
        let dim = read_u64(body, 8);
        if dim == 0 {
            return Err(InterchangeError::InvalidHeader(
                "dim must be positive".into(),
            ));
        }
        let values = read_payload(&bytes[MATRIX_HEADER_LEN..], vocab_size, dim)?;
        let vocab_size = vocab_size as usize;
        if tokens.len() != vocab_size {
            return Err(InterchangeError::VocabMismatch {
                expected: vocab_size,
                found: tokens.len(),
            });
        }
        Self::new(dim as usize, values, tokens)
    }

    /// Writes the tensor file and its vocabulary sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())?;
        write_json(&vocab_sidecar_path(path), &self.tokens)
    }
}

/// A time-ordered run of fixed-duration vectors from one model stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSequence {
    utterance_id: String,
    stage: Stage,
    frame_ms: u32,
    dim: usize,
    frames: Vec<f32>,
}

impl RepresentationSequence {
    pub fn new(
        utterance_id: impl Into<String>,
        stage: Stage,
        frame_ms: u32,
        dim: usize,
        frames: Vec<f32>,
    ) -> Result<Self> {
        if frame_ms == 0 {
            return Err(InterchangeError::ZeroFrameDuration);
        }
        if dim == 0 {
            return Err(InterchangeError::InvalidHeader(
                "dim must be positive".into(),
            ));
        }
        if frames.is_empty() || frames.len() % dim != 0 {
            return Err(InterchangeError::ShapeMismatch {
                expected: (frames.len() / dim).max(1) as u64 * dim as u64 * 4,
                found: frames.len() as u64 * 4,
            });
        }
        check_finite(&frames)?;
        Ok(Self {
            utterance_id: utterance_id.into(),
            stage,
            frame_ms,
            dim,
            frames,
        })
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }

    pub fn with_utterance_id(mut self, utterance_id: impl Into<String>) -> Self {
        self.utterance_id = utterance_id.into();
        self
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn frame_ms(&self) -> u32 {
        self.frame_ms
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, index: usize) -> &[f32] {
        &self.frames[index * self.dim..(index + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.frames.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f32] {
        &self.frames
    }

    /// Half-open time span `[i * frame_ms, (i + 1) * frame_ms)` of frame `i`.
    pub fn frame_span(&self, index: usize) -> (u64, u64) {
        let ms = u64::from(self.frame_ms);
        (index as u64 * ms, (index as u64 + 1) * ms)
    }

    /// Total covered duration in milliseconds.
    pub fn duration_ms(&self) -> u64 {
        self.num_frames() as u64 * u64::from(self.frame_ms)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SEQUENCE_HEADER_LEN + self.frames.len() * 4);
        out.extend_from_slice(MAGIC);
        out.push(KIND_SEQUENCE);
        out.extend_from_slice(&(self.num_frames() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&self.frame_ms.to_le_bytes());
        out.push(self.stage.code());
        push_payload(&mut out, &self.frames);
        out
    }

    pub fn from_bytes(bytes: &[u8], utterance_id: impl Into<String>) -> Result<Self> {
        let body = check_prefix(bytes, KIND_SEQUENCE, Path::new("<memory>"))?;
        if bytes.len() < SEQUENCE_HEADER_LEN {
            return Err(InterchangeError::InvalidHeader(
                "truncated sequence header".into(),
            ));
        }
        let num_frames = read_u64(body, 0);
        let dim = read_u64(body, 8);
        let frame_ms = u32::from_le_bytes(body[16..20].try_into().expect("4 bytes"));
        let stage = Stage::from_code(body[20])?;
        if frame_ms == 0 {
            return Err(InterchangeError::ZeroFrameDuration);
        }
        if dim == 0 || num_frames == 0 {
            return Err(InterchangeError::InvalidHeader(
                "num_frames and dim must be positive".into(),
            ));
        }
        let values = read_payload(&bytes[SEQUENCE_HEADER_LEN..], num_frames, dim)?;
        Self::new(utterance_id, stage, frame_ms, dim as usize, values)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }
}

/// `<dir>/<stem>.vocab.json` for a matrix stored at `<dir>/<stem>.<ext>`.
pub fn vocab_sidecar_path(matrix_path: &Path) -> PathBuf {
    matrix_path.with_extension("vocab.json")
}

pub fn load_embedding_matrix(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = read_file(path)?;
    // Check the magic before touching the sidecar so foreign files fail as BadMagic.
    check_prefix(&bytes, KIND_MATRIX, path)?;
    let tokens: Vec<String> = read_json(&vocab_sidecar_path(path))?;
    EmbeddingMatrix::from_bytes(&bytes, tokens)
}

/// Loads a sequence; its utterance id defaults to the file stem until a
/// corpus manifest assigns the real one.
pub fn load_representation_sequence(path: &Path) -> Result<RepresentationSequence> {
    let bytes = read_file(path)?;
    check_prefix(&bytes, KIND_SEQUENCE, path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RepresentationSequence::from_bytes(&bytes, id)
}

/// Number of whole frames a fixed-rate adapter emits for `duration_ms` of audio.
pub fn expected_frame_count(duration_ms: u64, frame_ms: u32) -> Result<u64> {
    if frame_ms == 0 {
        return Err(InterchangeError::ZeroFrameDuration);
    }
    Ok(duration_ms / u64::from(frame_ms))
}

fn check_prefix<'a>(bytes: &'a [u8], kind: u8, path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < 9 || &bytes[..8] != MAGIC {
        return Err(InterchangeError::BadMagic(path.to_path_buf()));
    }
    if bytes[8] != kind {
        return Err(InterchangeError::BadKind {
            path: path.to_path_buf(),
            expected: kind,
            found: bytes[8],
        });
    }
    Ok(&bytes[9..])
}

fn read_u64(body: &[u8], offset: usize) -> u64 {
    u64::from_le_bytes(body[offset..offset + 8].try_into().expect("8 bytes"))
}

fn read_payload(payload: &[u8], rows: u64, dim: u64) -> Result<Vec<f32>> {
    let expected = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| InterchangeError::InvalidHeader("declared shape overflows".into()))?;
    if payload.len() as u64 != expected {
        return Err(InterchangeError::ShapeMismatch {
            expected,
            found: payload.len() as u64,
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    check_finite(&values)?;
    Ok(values)
}

fn push_payload(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(InterchangeError::NonFinite(i)),
        None => Ok(()),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| InterchangeError::Io {
        path: path.to_path_buf(),
        source,
    })
}
