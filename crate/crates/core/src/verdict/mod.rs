//! Per-word verdicts from nearest-token evidence.
//!
//! Each ground-truth word is tested against its aligned top-1 tokens in a
//! fixed order, and the first test that fires decides the verdict:
//!
//! 1. transcription - a token equals the word;
//! 2. translation - a token equals a word aligned to it in one of the
//!    corpus's top token languages;
//! 3. semantic - a token's cross-lingual embedding is close enough to the
//!    word's (an aligned English word stands in for words the space lacks);
//! 4. transliteration - the tokens' phones, read in frame order, contain
//!    enough of the word's phones in order.
//!
//! Words where nothing fires are `Unclear`. Words with any other verdict are
//! "decipherable".

mod calibrate;
mod phones;
mod space;

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::neighbor::NeighborAssignment;
use crate::providers::{strip_token_markers, ProviderError, Providers, UNDETERMINED};

pub use calibrate::{calibrate_threshold, load_simlex, SimlexPair, DEFAULT_HIGH_CUTOFF};
pub use phones::{ordered_containment, transliteration_match, PhoneMatch};
pub use space::MultilingualEmbeddingSpace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerdictError {
    #[error("word has no phones to match")]
    EmptyWordPhones,
    #[error("no token has an identified language")]
    NoIdentifiedTokens,
    #[error("need at least {needed} resolvable pairs with both classes present, got {found}")]
    InsufficientPairs { needed: usize, found: usize },
    #[error("invalid verdict config: {0}")]
    InvalidConfig(String),
    #[error("embedding space: {0}")]
    InvalidSpace(String),
    #[error("word {word_index} ({word}): {source}")]
    Provider {
        word_index: usize,
        word: String,
        #[source]
        source: ProviderError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Transcribed,
    Translated,
    Semantic,
    Transliterated,
    Unclear,
}

impl Verdict {
    pub const ALL: [Verdict; 5] = [
        Verdict::Transcribed,
        Verdict::Translated,
        Verdict::Semantic,
        Verdict::Transliterated,
        Verdict::Unclear,
    ];

    pub fn is_decipherable(self) -> bool {
        self != Verdict::Unclear
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Transcribed => "Transcribed",
            Verdict::Translated => "Translated",
            Verdict::Semantic => "Semantic",
            Verdict::Transliterated => "Transliterated",
            Verdict::Unclear => "Unclear",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One rung of the ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Step {
    #[serde(rename = "3a")]
    Transcription,
    #[serde(rename = "3b")]
    Translation,
    #[serde(rename = "3c")]
    Semantic,
    #[serde(rename = "3d")]
    Transliteration,
}

impl Step {
    pub const ALL: [Step; 4] = [
        Step::Transcription,
        Step::Translation,
        Step::Semantic,
        Step::Transliteration,
    ];

    pub fn verdict(self) -> Verdict {
        match self {
            Step::Transcription => Verdict::Transcribed,
            Step::Translation => Verdict::Translated,
            Step::Semantic => Verdict::Semantic,
            Step::Transliteration => Verdict::Transliterated,
        }
    }
}

impl std::str::FromStr for Step {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "3a" | "transcription" => Ok(Step::Transcription),
            "3b" | "translation" => Ok(Step::Translation),
            "3c" | "semantic" => Ok(Step::Semantic),
            "3d" | "transliteration" => Ok(Step::Transliteration),
            other => Err(format!(
                "unknown step {other:?} (expected 3a, 3b, 3c or 3d)"
            )),
        }
    }
}

/// How token and word strings are compared in the transcription and
/// translation steps. Tokenizer space markers are always stripped first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Normalization {
    #[default]
    Exact,
    Casefold,
    CasefoldStripMarks,
}

impl Normalization {
    pub fn apply<'a>(self, text: &'a str) -> Cow<'a, str> {
        match self {
            Normalization::Exact => Cow::Borrowed(text),
            Normalization::Casefold => Cow::Owned(text.to_lowercase()),
            Normalization::CasefoldStripMarks => Cow::Owned(
                text.nfd()
                    .filter(|c| !is_combining_mark(*c))
                    .nfc()
                    .collect::<String>()
                    .to_lowercase(),
            ),
        }
    }

    fn eq(self, a: &str, b: &str) -> bool {
        self.apply(strip_token_markers(a)) == self.apply(strip_token_markers(b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerdictConfig {
    pub semantic_threshold: f64,
    pub phone_match_ratio: f64,
    /// Require strictly more than `phone_match_ratio` of the phones.
    pub phone_match_strict: bool,
    pub normalization: Normalization,
    pub enable_steps: BTreeSet<Step>,
    pub top_k_languages: usize,
}

impl Default for VerdictConfig {
    fn default() -> Self {
        Self {
            semantic_threshold: 0.54,
            phone_match_ratio: 0.5,
            phone_match_strict: false,
            normalization: Normalization::Exact,
            enable_steps: Step::ALL.into_iter().collect(),
            top_k_languages: 3,
        }
    }
}

impl VerdictConfig {
    pub fn validate(&self) -> Result<(), VerdictError> {
        if !(0.0..=1.0).contains(&self.semantic_threshold) {
            return Err(VerdictError::InvalidConfig(format!(
                "semantic_threshold {} outside [0, 1]",
                self.semantic_threshold
            )));
        }
        if !(self.phone_match_ratio > 0.0 && self.phone_match_ratio <= 1.0) {
            return Err(VerdictError::InvalidConfig(format!(
                "phone_match_ratio {} outside (0, 1]",
                self.phone_match_ratio
            )));
        }
        if self.top_k_languages == 0 {
            return Err(VerdictError::InvalidConfig(
                "top_k_languages must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_steps(mut self, steps: impl IntoIterator<Item = Step>) -> Self {
        self.enable_steps = steps.into_iter().collect();
        self
    }

    pub fn enabled(&self, step: Step) -> bool {
        self.enable_steps.contains(&step)
    }
}

/// What made a verdict fire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Transcription { token: String },
    Translation { token: String, language: String },
    Semantic { token: String, similarity: f64 },
    Transliteration { matched: usize, total: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordVerdict {
    pub word_index: usize,
    pub verdict: Verdict,
    pub evidence: Option<Evidence>,
    /// Semantic-step cosines, empty when an earlier step decided the word.
    pub similarities: Vec<f64>,
}

/// A top-1 token observed on one frame aligned to the word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenObservation {
    pub token: String,
    pub language: String,
}

impl TokenObservation {
    pub fn new(token: impl Into<String>, language: impl Into<String>) -> Self {
        Self {
            token: token.into(),
            language: language.into(),
        }
    }
}

/// Translation words aligned to the ground-truth word in one language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedWords {
    pub language: String,
    pub words: Vec<String>,
}

/// Everything the ladder looks at for one word.
#[derive(Debug, Clone)]
pub struct WordContext {
    pub word_index: usize,
    pub word: String,
    /// Language of the ground-truth transcript.
    pub language: String,
    /// Top-1 tokens of the word's frames, in frame order (repeats kept).
    pub tokens: Vec<TokenObservation>,
    /// Aligned translation words, in top-language order.
    pub aligned: Vec<AlignedWords>,
    /// Aligned English words, used when the word has no vector of its own.
    pub english_pivots: Vec<String>,
}

impl WordContext {
    /// Distinct tokens in first-seen order.
    pub fn distinct_tokens(&self) -> Vec<&TokenObservation> {
        let mut seen = BTreeSet::new();
        self.tokens
            .iter()
            .filter(|t| seen.insert(t.token.as_str()))
            .collect()
    }
}

/// The top `k` token languages by count; ties by code; `und` excluded.
pub fn top_languages<'a>(
    assignments: impl IntoIterator<Item = &'a NeighborAssignment>,
    k: usize,
) -> Result<Vec<String>, VerdictError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in assignments {
        if let Some(lang) = a
            .language
            .as_deref()
            .filter(|l| *l != UNDETERMINED && !l.is_empty())
        {
            *counts.entry(lang).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(VerdictError::NoIdentifiedTokens);
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Ok(ranked
        .into_iter()
        .take(k)
        .map(|(l, _)| l.to_owned())
        .collect())
}

/// First token equal to `word` under `normalization`.
pub fn is_transcription<'t>(
    word: &str,
    tokens: &[&'t str],
    normalization: Normalization,
) -> Option<&'t str> {
    tokens.iter().copied().find(|t| normalization.eq(word, t))
}

/// First token equal to an aligned translation word, scanning languages in
/// the given order. Returns the token and the language it matched in.
pub fn is_translation<'t>(
    aligned: &[AlignedWords],
    tokens: &[&'t str],
    normalization: Normalization,
) -> Option<(&'t str, String)> {
    for a in aligned {
        for &token in tokens {
            if a.words.iter().any(|w| normalization.eq(w, token)) {
                return Some((token, a.language.clone()));
            }
        }
    }
    None
}

/// Cosine between the word's and the token's vectors in the shared space.
///
/// When the word has no vector (its language is not covered, or the word is
/// missing), the aligned English word `english_pivot` stands in for it.
pub fn semantic_similarity(
    word: &str,
    word_lang: &str,
    token: &str,
    token_lang: &str,
    space: &MultilingualEmbeddingSpace,
    english_pivot: Option<&str>,
) -> Option<f64> {
    let word_vec = space
        .lookup(word_lang, word)
        .or_else(|| english_pivot.and_then(|p| space.lookup("en", p)))?;
    let token_vec = space.lookup(token_lang, strip_token_markers(token))?;
    space::cosine(word_vec, token_vec)
}

fn word_similarities(ctx: &WordContext, space: &MultilingualEmbeddingSpace) -> Vec<(String, f64)> {
    let direct = space.lookup(&ctx.language, &ctx.word).is_some();
    let mut out = Vec::new();
    for obs in ctx.distinct_tokens() {
        if strip_token_markers(&obs.token).is_empty() {
            continue;
        }
        if direct {
            if let Some(s) = semantic_similarity(
                &ctx.word,
                &ctx.language,
                &obs.token,
                &obs.language,
                space,
                None,
            ) {
                out.push((obs.token.clone(), s));
            }
        } else {
            for pivot in &ctx.english_pivots {
                if let Some(s) = semantic_similarity(
                    &ctx.word,
                    &ctx.language,
                    &obs.token,
                    &obs.language,
                    space,
                    Some(pivot),
                ) {
                    out.push((obs.token.clone(), s));
                }
            }
        }
    }
    out
}

fn token_phones(ctx: &WordContext, providers: &Providers) -> Result<Vec<String>, ProviderError> {
    let mut stream = Vec::new();
    for obs in &ctx.tokens {
        let text = strip_token_markers(&obs.token);
        if text.is_empty() {
            continue;
        }
        let own = if obs.language == UNDETERMINED || obs.language.is_empty() {
            None
        } else {
            match providers.phonetize(text, &obs.language) {
                Ok(p) => Some(p),
                Err(ProviderError::UnsupportedLanguage(_)) => None,
                Err(e) => return Err(e),
            }
        };
        let phones = match own {
            Some(p) => p,
            None => match providers.phonetize(text, &ctx.language) {
                Ok(p) => p,
                Err(ProviderError::UnsupportedLanguage(_)) => Vec::new(),
                Err(e) => return Err(e),
            },
        };
        stream.extend(phones);
    }
    Ok(stream)
}

/// Runs the enabled steps in ladder order; the first that fires decides.
pub fn classify_word(
    ctx: &WordContext,
    config: &VerdictConfig,
    space: &MultilingualEmbeddingSpace,
    providers: &Providers,
) -> Result<WordVerdict, VerdictError> {
    let decided = |verdict, evidence, similarities| WordVerdict {
        word_index: ctx.word_index,
        verdict,
        evidence: Some(evidence),
        similarities,
    };
    let provider_err = |source| VerdictError::Provider {
        word_index: ctx.word_index,
        word: ctx.word.clone(),
        source,
    };

    let distinct = ctx.distinct_tokens();
    let tokens: Vec<&str> = distinct.iter().map(|t| t.token.as_str()).collect();

    if config.enabled(Step::Transcription) {
        if let Some(token) = is_transcription(&ctx.word, &tokens, config.normalization) {
            return Ok(decided(
                Verdict::Transcribed,
                Evidence::Transcription {
                    token: token.to_owned(),
                },
                vec![],
            ));
        }
    }
    if config.enabled(Step::Translation) {
        if let Some((token, language)) = is_translation(&ctx.aligned, &tokens, config.normalization)
        {
            return Ok(decided(
                Verdict::Translated,
                Evidence::Translation {
                    token: token.to_owned(),
                    language,
                },
                vec![],
            ));
        }
    }
    let mut similarities = Vec::new();
    if config.enabled(Step::Semantic) {
        let scored = word_similarities(ctx, space);
        similarities = scored.iter().map(|(_, s)| *s).collect();
        let best = scored
            .iter()
            .fold(None::<&(String, f64)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        if let Some((token, similarity)) = best.filter(|(_, s)| *s >= config.semantic_threshold) {
            return Ok(decided(
                Verdict::Semantic,
                Evidence::Semantic {
                    token: token.clone(),
                    similarity: *similarity,
                },
                similarities,
            ));
        }
    }
    if config.enabled(Step::Transliteration) && !ctx.tokens.is_empty() {
        let word_phones = providers
            .phonetize(&ctx.word, &ctx.language)
            .map_err(provider_err)?;
        if !word_phones.is_empty() {
            let stream = token_phones(ctx, providers).map_err(provider_err)?;
            let m = transliteration_match(
                &word_phones,
                &stream,
                config.phone_match_ratio,
                config.phone_match_strict,
            )?;
            if m.is_match {
                return Ok(decided(
                    Verdict::Transliterated,
                    Evidence::Transliteration {
                        matched: m.matched,
                        total: m.total,
                    },
                    similarities,
                ));
            }
        }
    }
    Ok(WordVerdict {
        word_index: ctx.word_index,
        verdict: Verdict::Unclear,
        evidence: None,
        similarities,
    })
}
