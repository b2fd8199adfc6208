use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    load_embedding_matrix, load_representation_sequence, read_json, write_json, EmbeddingMatrix,
    InterchangeError, RepresentationSequence, Result, Stage, UtteranceRecord,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub record: PathBuf,
    pub sequences: BTreeMap<Stage, PathBuf>,
}

/// Index of one corpus: a model, a language, and its utterances.
///
/// Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub corpus_id: String,
    pub model_id: String,
    pub language: String,
    pub embedding_matrix_path: PathBuf,
    pub utterances: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// An utterance with its ground truth and every tapped sequence.
#[derive(Debug, Clone)]
pub struct LoadedUtterance {
    pub record: UtteranceRecord,
    pub sequences: BTreeMap<Stage, RepresentationSequence>,
}

impl LoadedUtterance {
    pub fn sequence(&self, stage: Stage) -> Option<&RepresentationSequence> {
        self.sequences.get(&stage)
    }
}

/// A validated manifest whose utterances are loaded on access.
#[derive(Debug, Clone)]
pub struct Corpus {
    manifest: CorpusManifest,
    base_dir: PathBuf,
}

pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let manifest: CorpusManifest = read_json(manifest_path)?;
    let base_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let corpus = Corpus { manifest, base_dir };
    if corpus.manifest.language.trim().is_empty() {
        return Err(InterchangeError::InvariantViolation {
            utterance_id: String::new(),
            reason: "manifest language is empty".into(),
        });
    }
    let matrix = corpus.resolve(&corpus.manifest.embedding_matrix_path);
    require_file(&matrix)?;
    require_file(&super::vocab_sidecar_path(&matrix))?;
    for entry in &corpus.manifest.utterances {
        require_file(&corpus.resolve(&entry.record))?;
        for path in entry.sequences.values() {
            require_file(&corpus.resolve(path))?;
        }
    }
    Ok(corpus)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(InterchangeError::MissingFile(path.to_path_buf()))
    }
}

impl Corpus {
    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn language(&self) -> &str {
        &self.manifest.language
    }

    pub fn len(&self) -> usize {
        self.manifest.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.utterances.is_empty()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn embedding_matrix(&self) -> Result<EmbeddingMatrix> {
        load_embedding_matrix(&self.resolve(&self.manifest.embedding_matrix_path))
    }

    /// Loads and validates utterance `index`.
    pub fn utterance(&self, index: usize) -> Result<LoadedUtterance> {
        let entry = &self.manifest.utterances[index];
        let record = UtteranceRecord::load(&self.resolve(&entry.record))?;
        if record.language != self.manifest.language {
            return Err(InterchangeError::LanguageMismatch {
                utterance_id: record.utterance_id.clone(),
                expected: self.manifest.language.clone(),
                found: record.language.clone(),
            });
        }
        let mut sequences = BTreeMap::new();
        for (&stage, path) in &entry.sequences {
            let seq = load_representation_sequence(&self.resolve(path))?
                .with_utterance_id(record.utterance_id.clone());
            if seq.stage() != stage {
                return Err(InterchangeError::InvariantViolation {
                    utterance_id: record.utterance_id.clone(),
                    reason: format!(
                        "{} holds a {} sequence but is listed under {stage}",
                        path.display(),
                        seq.stage()
                    ),
                });
            }
            sequences.insert(stage, seq);
        }
        Ok(LoadedUtterance { record, sequences })
    }

    /// Utterance ids in manifest order, reading only the records.
    pub fn utterance_ids(&self) -> Result<Vec<String>> {
        self.manifest
            .utterances
            .iter()
            .map(|e| UtteranceRecord::load(&self.resolve(&e.record)).map(|r| r.utterance_id))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<LoadedUtterance>> + '_ {
        (0..self.len()).map(|i| self.utterance(i))
    }
}
