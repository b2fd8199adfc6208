//! Frame-to-span assignment for fixed-rate representation sequences.
//!
//! Frame `i` covers `[i * frame_ms, (i + 1) * frame_ms)`. A frame belongs to
//! a span when the two half-open intervals overlap by strictly more than
//! `min_overlap_ms`, so a frame straddling a boundary can belong to both
//! neighbouring words.

use thiserror::Error;

use crate::interchange::{RepresentationSequence, UtteranceRecord};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlignError {
    #[error("inverted span [{start_ms}, {end_ms})")]
    InvertedSpan { start_ms: u64, end_ms: u64 },
    #[error("frame duration must be positive")]
    ZeroFrameDuration,
    #[error("record {record} paired with sequence {sequence}")]
    UtteranceMismatch { record: String, sequence: String },
    #[error("cannot pool an empty frame set")]
    EmptyPool,
    #[error("frame {index} out of range for {num_frames} frames")]
    IndexOutOfRange { index: usize, num_frames: usize },
}

/// Frames aligned to one transcript word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanAssignment {
    pub word_index: usize,
    pub frame_indices: Vec<usize>,
}

pub fn frames_for_span(
    start_ms: u64,
    end_ms: u64,
    frame_ms: u32,
    num_frames: usize,
    min_overlap_ms: u64,
) -> Result<Vec<usize>, AlignError> {
    if end_ms <= start_ms {
        return Err(AlignError::InvertedSpan { start_ms, end_ms });
    }
    if frame_ms == 0 {
        return Err(AlignError::ZeroFrameDuration);
    }
    let ms = u64::from(frame_ms);
    let first = (start_ms / ms) as usize;
    let last = end_ms.div_ceil(ms) as usize;
    Ok((first..last.min(num_frames))
        .filter(|&i| {
            let lo = (i as u64 * ms).max(start_ms);
            let hi = ((i as u64 + 1) * ms).min(end_ms);
            hi > lo && hi - lo > min_overlap_ms
        })
        .collect())
}

/// One assignment per transcript word, in word order.
pub fn assign_words(
    record: &UtteranceRecord,
    seq: &RepresentationSequence,
    min_overlap_ms: u64,
) -> Result<Vec<SpanAssignment>, AlignError> {
    if record.utterance_id != seq.utterance_id() {
        return Err(AlignError::UtteranceMismatch {
            record: record.utterance_id.clone(),
            sequence: seq.utterance_id().to_owned(),
        });
    }
    record
        .transcript_words
        .iter()
        .enumerate()
        .map(|(word_index, w)| {
            frames_for_span(
                w.start_ms,
                w.end_ms,
                seq.frame_ms(),
                seq.num_frames(),
                min_overlap_ms,
            )
            .map(|frame_indices| SpanAssignment {
                word_index,
                frame_indices,
            })
        })
        .collect()
}

/// Frames overlapping each transcript phone, in phone order.
pub fn assign_phones(
    record: &UtteranceRecord,
    seq: &RepresentationSequence,
    min_overlap_ms: u64,
) -> Result<Vec<Vec<usize>>, AlignError> {
    if record.utterance_id != seq.utterance_id() {
        return Err(AlignError::UtteranceMismatch {
            record: record.utterance_id.clone(),
            sequence: seq.utterance_id().to_owned(),
        });
    }
    record
        .transcript_phones
        .iter()
        .map(|p| {
            if p.start_ms == p.end_ms {
                return Ok(Vec::new());
            }
            frames_for_span(
                p.start_ms,
                p.end_ms,
                seq.frame_ms(),
                seq.num_frames(),
                min_overlap_ms,
            )
        })
        .collect()
}

/// Mean of the selected frames, accumulated in f64.
pub fn pool_span(
    seq: &RepresentationSequence,
    frame_indices: &[usize],
) -> Result<Vec<f64>, AlignError> {
    if frame_indices.is_empty() {
        return Err(AlignError::EmptyPool);
    }
    let mut sum = vec![0f64; seq.dim()];
    for &i in frame_indices {
        if i >= seq.num_frames() {
            return Err(AlignError::IndexOutOfRange {
                index: i,
                num_frames: seq.num_frames(),
            });
        }
        for (s, &v) in sum.iter_mut().zip(seq.frame(i)) {
            *s += f64::from(v);
        }
    }
    let n = frame_indices.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

/// Mean of every frame in the sequence.
pub fn pool_all(seq: &RepresentationSequence) -> Vec<f64> {
    let all: Vec<usize> = (0..seq.num_frames()).collect();
    pool_span(seq, &all).expect("sequences hold at least one frame")
}
