//! Corpus-level token analysis: nearest tokens, token languages, verdicts.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{self, AlignError};
use crate::interchange::{AlignedTranslation, Corpus, InterchangeError, Stage, UtteranceRecord};
use crate::neighbor::{FrameAssignment, NeighborError, NeighborIndex};
use crate::providers::{ProviderError, Providers};
use crate::report::{self, DistributionReport, ReportError};
use crate::verdict::{
    classify_word, top_languages, AlignedWords, Evidence, MultilingualEmbeddingSpace, Step,
    TokenObservation, Verdict, VerdictConfig, VerdictError, WordContext,
};

/// Which exit class an error belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Provider,
    Internal,
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Interchange(#[from] InterchangeError),
    #[error("utterance {utterance_id}: {source}")]
    Neighbor {
        utterance_id: String,
        #[source]
        source: NeighborError,
    },
    #[error("utterance {utterance_id}: {source}")]
    Align {
        utterance_id: String,
        #[source]
        source: AlignError,
    },
    #[error("{context}: {source}")]
    Provider {
        context: String,
        #[source]
        source: ProviderError,
    },
    #[error("utterance {utterance_id}: {source}")]
    Verdict {
        utterance_id: String,
        #[source]
        source: VerdictError,
    },
    #[error("utterance {0} has no {1} sequence")]
    MissingStage(String, Stage),
    #[error("assignments given for {found} utterances, corpus has {expected}")]
    AssignmentCount { expected: usize, found: usize },
    #[error("assignments for {found} found where {expected} was expected")]
    AssignmentOrder { expected: String, found: String },
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl AnalysisError {
    pub fn class(&self) -> ErrorClass {
        match self {
            AnalysisError::Provider { .. } => ErrorClass::Provider,
            AnalysisError::Verdict {
                source: VerdictError::Provider { .. },
                ..
            } => ErrorClass::Provider,
            AnalysisError::Verdict {
                source:
                    VerdictError::InvalidConfig(_)
                    | VerdictError::InvalidSpace(_)
                    | VerdictError::NoIdentifiedTokens,
                ..
            } => ErrorClass::Input,
            AnalysisError::Verdict { .. } => ErrorClass::Internal,
            AnalysisError::Report(
                ReportError::Io { .. } | ReportError::Csv(_) | ReportError::Json(_),
            ) => ErrorClass::Internal,
            _ => ErrorClass::Input,
        }
    }
}

/// Nearest-token assignments for one utterance's frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceAssignments {
    pub utterance_id: String,
    pub stage: Stage,
    pub frame_ms: u32,
    pub assignments: Vec<FrameAssignment>,
}

impl UtteranceAssignments {
    pub fn no_neighbor_count(&self) -> usize {
        self.assignments
            .iter()
            .filter(|a| a.assigned().is_none())
            .count()
    }
}

/// Step 1 over every utterance of `corpus` at `stage`.
pub fn compute_neighbors(
    corpus: &Corpus,
    stage: Stage,
) -> Result<Vec<UtteranceAssignments>, AnalysisError> {
    let matrix = corpus.embedding_matrix()?;
    let index = NeighborIndex::new(&matrix).map_err(|source| AnalysisError::Neighbor {
        utterance_id: String::from("<embedding matrix>"),
        source,
    })?;
    let mut out = Vec::with_capacity(corpus.len());
    for utterance in corpus.iter() {
        let u = utterance?;
        let id = u.record.utterance_id.clone();
        let seq = u
            .sequence(stage)
            .ok_or_else(|| AnalysisError::MissingStage(id.clone(), stage))?;
        let assignments = index
            .assign(seq)
            .map_err(|source| AnalysisError::Neighbor {
                utterance_id: id.clone(),
                source,
            })?;
        out.push(UtteranceAssignments {
            utterance_id: id,
            stage,
            frame_ms: seq.frame_ms(),
            assignments,
        });
    }
    Ok(out)
}

/// Identifies the language of every distinct assigned token and stores it
/// on the assignments. Tokens are looked up once each, in sorted order.
pub fn label_languages(
    utterances: &mut [UtteranceAssignments],
    providers: &Providers,
) -> Result<(), AnalysisError> {
    let tokens: BTreeSet<String> = utterances
        .iter()
        .flat_map(|u| u.assignments.iter().filter_map(FrameAssignment::assigned))
        .map(|a| a.token.clone())
        .collect();
    let languages: BTreeMap<String, String> = tokens
        .into_par_iter()
        .map(|t| {
            let lang = providers.identify_token_language(&t).map_err(|source| {
                AnalysisError::Provider {
                    context: format!("language of token {t:?}"),
                    source,
                }
            })?;
            Ok((t, lang))
        })
        .collect::<Result<_, AnalysisError>>()?;
    for a in utterances.iter_mut().flat_map(|u| {
        u.assignments
            .iter_mut()
            .filter_map(FrameAssignment::assigned_mut)
    }) {
        a.language = languages.get(&a.token).cloned();
    }
    Ok(())
}

/// One word's verdict with its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub utterance_id: String,
    pub word_index: usize,
    pub surface: String,
    /// Top-1 tokens of the word's frames, in frame order.
    pub tokens: Vec<String>,
    pub verdict: Verdict,
    pub evidence: Option<Evidence>,
    pub similarities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRun {
    pub corpus_id: String,
    pub language: String,
    pub top_languages: Vec<String>,
    pub verdicts: Vec<VerdictRecord>,
}

impl VerdictRun {
    pub fn reports(&self) -> Result<Vec<DistributionReport>, ReportError> {
        let verdicts = || self.verdicts.iter().map(|v| v.verdict);
        let mut out = Vec::new();
        match report::verdict_distribution(&self.corpus_id, verdicts()) {
            Ok(r) => out.push(r),
            Err(ReportError::NoDecipherableWords) => {
                log::warn!("{}: no decipherable words", self.corpus_id);
            }
            Err(e) => return Err(e),
        }
        out.push(report::raw_verdict_distribution(
            &self.corpus_id,
            verdicts(),
        )?);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignOptions {
    pub min_overlap_ms: u64,
}

fn sentence(record: &UtteranceRecord) -> String {
    record.words().collect::<Vec<_>>().join(" ")
}

/// The record's translation into `target`, or one fetched and aligned via
/// the providers. `None` when the providers do not serve the pair.
fn translation_for(
    record: &UtteranceRecord,
    target: &str,
    providers: &Providers,
) -> Result<Option<AlignedTranslation>, AnalysisError> {
    if let Some(t) = record.translations.get(target) {
        return Ok(Some(t.clone()));
    }
    let source_sentence = sentence(record);
    let context = |what: &str| {
        format!(
            "utterance {}: {what} {}->{target}",
            record.utterance_id, record.language
        )
    };
    let translated = match providers.translate(&source_sentence, &record.language, target) {
        Ok(t) => t,
        Err(ProviderError::UnsupportedLanguagePair { .. }) => {
            log::warn!("{}: pair unsupported, skipping", context("translation"));
            return Ok(None);
        }
        Err(source) => {
            return Err(AnalysisError::Provider {
                context: context("translation"),
                source,
            })
        }
    };
    if translated.trim().is_empty() {
        return Ok(None);
    }
    let alignment = providers
        .align_words(&source_sentence, &translated)
        .map_err(|source| AnalysisError::Provider {
            context: context("word alignment"),
            source,
        })?;
    Ok(Some(AlignedTranslation {
        sentence: translated,
        alignment,
    }))
}

/// Steps 2 and 3 over a corpus whose assignments carry token languages.
///
/// `assignments` must list the corpus utterances in manifest order.
pub fn run_verdicts(
    corpus: &Corpus,
    assignments: &[UtteranceAssignments],
    providers: &Providers,
    space: &MultilingualEmbeddingSpace,
    config: &VerdictConfig,
    align_options: &AlignOptions,
) -> Result<VerdictRun, AnalysisError> {
    let config_err = |source| AnalysisError::Verdict {
        utterance_id: String::from("<config>"),
        source,
    };
    config.validate().map_err(config_err)?;
    if assignments.len() != corpus.len() {
        return Err(AnalysisError::AssignmentCount {
            expected: corpus.len(),
            found: assignments.len(),
        });
    }
    let top = top_languages(
        assignments
            .iter()
            .flat_map(|u| u.assignments.iter().filter_map(FrameAssignment::assigned)),
        config.top_k_languages,
    )
    .map_err(config_err)?;
    let language = corpus.language().to_owned();
    let want_pivots = config.enabled(Step::Semantic) && language != "en";

    let per_utterance = (0..corpus.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<VerdictRecord>, AnalysisError> {
            let u = corpus.utterance(i)?;
            let record = &u.record;
            let frames = &assignments[i];
            if frames.utterance_id != record.utterance_id {
                return Err(AnalysisError::AssignmentOrder {
                    expected: record.utterance_id.clone(),
                    found: frames.utterance_id.clone(),
                });
            }
            let seq = u.sequence(frames.stage).ok_or_else(|| {
                AnalysisError::MissingStage(record.utterance_id.clone(), frames.stage)
            })?;
            let spans = align::assign_words(record, seq, align_options.min_overlap_ms).map_err(
                |source| AnalysisError::Align {
                    utterance_id: record.utterance_id.clone(),
                    source,
                },
            )?;

            let needs_translation =
                config.enabled(Step::Translation) || config.enabled(Step::Semantic);
            let mut translations: Vec<(String, AlignedTranslation)> = Vec::new();
            if needs_translation {
                for lang in top.iter().filter(|l| **l != language) {
                    if let Some(t) = translation_for(record, lang, providers)? {
                        translations.push((lang.clone(), t));
                    }
                }
            }
            let english = if want_pivots {
                match translations.iter().find(|(l, _)| l == "en") {
                    Some((_, t)) => Some(t.clone()),
                    None => translation_for(record, "en", providers)?,
                }
            } else {
                None
            };

            let by_frame: BTreeMap<usize, &FrameAssignment> = frames
                .assignments
                .iter()
                .map(|a| (a.frame_index(), a))
                .collect();
            spans
                .iter()
                .map(|span| {
                    let word = &record.transcript_words[span.word_index];
                    let tokens: Vec<TokenObservation> = span
                        .frame_indices
                        .iter()
                        .filter_map(|f| by_frame.get(f).and_then(|a| a.assigned()))
                        .map(|a| {
                            TokenObservation::new(
                                a.token.clone(),
                                a.language
                                    .clone()
                                    .unwrap_or_else(|| crate::providers::UNDETERMINED.to_owned()),
                            )
                        })
                        .collect();
                    let aligned = if config.enabled(Step::Translation) {
                        translations
                            .iter()
                            .map(|(lang, t)| AlignedWords {
                                language: lang.clone(),
                                words: t
                                    .aligned_to(span.word_index)
                                    .into_iter()
                                    .map(str::to_owned)
                                    .collect(),
                            })
                            .collect()
                    } else {
                        Vec::new()
                    };
                    let english_pivots = english
                        .as_ref()
                        .map(|t| {
                            t.aligned_to(span.word_index)
                                .into_iter()
                                .map(str::to_owned)
                                .collect()
                        })
                        .unwrap_or_default();
                    let ctx = WordContext {
                        word_index: span.word_index,
                        word: word.surface.clone(),
                        language: language.clone(),
                        tokens,
                        aligned,
                        english_pivots,
                    };
                    let v = classify_word(&ctx, config, space, providers).map_err(|source| {
                        AnalysisError::Verdict {
                            utterance_id: record.utterance_id.clone(),
                            source,
                        }
                    })?;
                    Ok(VerdictRecord {
                        utterance_id: record.utterance_id.clone(),
                        word_index: span.word_index,
                        surface: word.surface.clone(),
                        tokens: ctx.tokens.into_iter().map(|t| t.token).collect(),
                        verdict: v.verdict,
                        evidence: v.evidence,
                        similarities: v.similarities,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(VerdictRun {
        corpus_id: corpus.manifest().corpus_id.clone(),
        language,
        top_languages: top,
        verdicts: per_utterance.into_iter().flatten().collect(),
    })
}

/// Token-language report over all utterances.
pub fn token_language_report(
    corpus_id: &str,
    assignments: &[UtteranceAssignments],
) -> Result<DistributionReport, ReportError> {
    report::token_language_distribution(
        corpus_id,
        assignments.iter().flat_map(|u| u.assignments.iter()),
    )
}
