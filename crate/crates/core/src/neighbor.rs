//! Nearest-token search under mean-centred cosine similarity.
//!
//! For a representation vector `q`, the nearest token is
//! `argmax_i cos(q - m, E_i - m)` where `m` is the mean embedding row.
//! The scan is exact; ties go to the lowest index and rows that coincide
//! with the mean are skipped.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interchange::{EmbeddingMatrix, RepresentationSequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeighborError {
    #[error("query equals the embedding mean; cosine is undefined")]
    ZeroQuery,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("every centred embedding row is zero")]
    AllRowsDegenerate,
    #[error("frame {frame_index}: {source}")]
    Frame {
        frame_index: usize,
        #[source]
        source: Box<NeighborError>,
    },
}

/// Nearest token for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborAssignment {
    pub frame_index: usize,
    pub token_index: usize,
    pub token: String,
    pub similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
}

/// Per-frame outcome: a neighbor, or the sentinel for a frame equal to the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrameAssignment {
    Assigned(NeighborAssignment),
    NoNeighbor {
        frame_index: usize,
        no_neighbor: bool,
    },
}

impl FrameAssignment {
    pub fn frame_index(&self) -> usize {
        match self {
            FrameAssignment::Assigned(a) => a.frame_index,
            FrameAssignment::NoNeighbor { frame_index, .. } => *frame_index,
        }
    }

    pub fn assigned(&self) -> Option<&NeighborAssignment> {
        match self {
            FrameAssignment::Assigned(a) => Some(a),
            FrameAssignment::NoNeighbor { .. } => None,
        }
    }

    pub fn assigned_mut(&mut self) -> Option<&mut NeighborAssignment> {
        match self {
            FrameAssignment::Assigned(a) => Some(a),
            FrameAssignment::NoNeighbor { .. } => None,
        }
    }

    fn sentinel(frame_index: usize) -> Self {
        FrameAssignment::NoNeighbor {
            frame_index,
            no_neighbor: true,
        }
    }
}

/// Componentwise mean of all embedding rows, accumulated in f64.
pub fn embedding_mean(matrix: &EmbeddingMatrix) -> Vec<f64> {
    let mut sum = vec![0f64; matrix.dim()];
    for row in matrix.rows() {
        for (s, &v) in sum.iter_mut().zip(row) {
            *s += f64::from(v);
        }
    }
    let n = matrix.vocab_size() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    sum
}

/// Precomputed mean and centred row norms for repeated queries against one matrix.
#[derive(Debug, Clone)]
pub struct NeighborIndex<'a> {
    matrix: &'a EmbeddingMatrix,
    mean: Vec<f64>,
    row_norms: Vec<f64>,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(matrix: &'a EmbeddingMatrix) -> Result<Self, NeighborError> {
        let mean = embedding_mean(matrix);
        Self::with_mean(matrix, mean)
    }

    pub fn with_mean(matrix: &'a EmbeddingMatrix, mean: Vec<f64>) -> Result<Self, NeighborError> {
        if mean.len() != matrix.dim() {
            return Err(NeighborError::DimMismatch {
                expected: matrix.dim(),
                found: mean.len(),
            });
        }
        let mut row_norms = Vec::with_capacity(matrix.vocab_size());
        for row in matrix.rows() {
            let mut sq = 0f64;
            for (&v, &m) in row.iter().zip(&mean) {
                let d = f64::from(v) - m;
                sq += d * d;
            }
            row_norms.push(sq.sqrt());
        }
        if row_norms.iter().all(|&n| n == 0.0) {
            return Err(NeighborError::AllRowsDegenerate);
        }
        Ok(Self {
            matrix,
            mean,
            row_norms,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        self.matrix
    }

    /// Nearest token to `query`; `frame_index` is copied into the result.
    pub fn nearest(
        &self,
        query: &[f32],
        frame_index: usize,
    ) -> Result<NeighborAssignment, NeighborError> {
        if query.len() != self.matrix.dim() {
            return Err(NeighborError::DimMismatch {
                expected: self.matrix.dim(),
                found: query.len(),
            });
        }
        let centred: Vec<f64> = query
            .iter()
            .zip(&self.mean)
            .map(|(&q, &m)| f64::from(q) - m)
            .collect();
        let query_norm = centred.iter().map(|c| c * c).sum::<f64>().sqrt();
        if query_norm == 0.0 {
            return Err(NeighborError::ZeroQuery);
        }
        let offset: f64 = centred.iter().zip(&self.mean).map(|(c, m)| c * m).sum();

        // <q - m, E_i - m> = <q - m, E_i> - <q - m, m>
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in self.matrix.rows().enumerate() {
            let norm = self.row_norms[i];
            if norm == 0.0 {
                continue;
            }
            let dot: f64 = centred
                .iter()
                .zip(row)
                .map(|(c, &v)| c * f64::from(v))
                .sum();
            let cos = (dot - offset) / (query_norm * norm);
            if best.is_none_or(|(_, b)| cos > b) {
                best = Some((i, cos));
            }
        }
        let (token_index, cos) = best.ok_or(NeighborError::AllRowsDegenerate)?;
        Ok(NeighborAssignment {
            frame_index,
            token_index,
            token: self.matrix.token(token_index).to_owned(),
            similarity: cos.clamp(-1.0, 1.0),
            language: None,
        })
    }

    /// One assignment per frame, in frame order. Frames equal to the mean
    /// become [`FrameAssignment::NoNeighbor`] instead of failing the batch.
    pub fn assign(
        &self,
        seq: &RepresentationSequence,
    ) -> Result<Vec<FrameAssignment>, NeighborError> {
        if seq.dim() != self.matrix.dim() {
            return Err(NeighborError::DimMismatch {
                expected: self.matrix.dim(),
                found: seq.dim(),
            });
        }
        let frames: Vec<&[f32]> = seq.frames().collect();
        frames
            .par_iter()
            .enumerate()
            .map(|(i, frame)| match self.nearest(frame, i) {
                Ok(a) => Ok(FrameAssignment::Assigned(a)),
                Err(NeighborError::ZeroQuery) => Ok(FrameAssignment::sentinel(i)),
                Err(e) => Err(NeighborError::Frame {
                    frame_index: i,
                    source: Box::new(e),
                }),
            })
            .collect()
    }
}

/// Single-query form of [`NeighborIndex::nearest`] with an explicit mean.
pub fn nearest_token(
    query: &[f32],
    matrix: &EmbeddingMatrix,
    mean: &[f64],
) -> Result<NeighborAssignment, NeighborError> {
    NeighborIndex::with_mean(matrix, mean.to_vec())?.nearest(query, 0)
}

pub fn assign_neighbors(
    seq: &RepresentationSequence,
    matrix: &EmbeddingMatrix,
) -> Result<Vec<FrameAssignment>, NeighborError> {
    NeighborIndex::new(matrix)?.assign(seq)
}

pub fn write_assignments(path: &Path, assignments: &[FrameAssignment]) -> std::io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(assignments).map_err(std::io::Error::other)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)
}

pub fn read_assignments(path: &Path) -> std::io::Result<Vec<FrameAssignment>> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(std::io::Error::other)
}
