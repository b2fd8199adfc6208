//! Clients for language identification, translation, translation word
//! alignment and grapheme-to-phoneme conversion.
//!
//! Every capability goes through a [`Backend`]. Backends are interchangeable:
//! a frozen [`FixtureBackend`], a [`TableG2p`] mapper, a [`CommandBackend`]
//! speaking JSON lines over stdio, or (feature `remote`) an HTTP
//! [`RemoteBackend`]. [`CachedBackend`] persists responses keyed by a SHA-256
//! digest of the canonical request.

mod cache;
mod command;
mod g2p;
mod languages;
mod limit;
#[cfg(feature = "remote")]
mod remote;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{request_digest, CacheStore, CachedBackend, FixtureBackend, FIXTURE_NAMESPACE};
pub use command::CommandBackend;
pub use g2p::{G2pTable, TableG2p};
pub use languages::is_known_language;
pub use limit::InflightLimit;
#[cfg(feature = "remote")]
pub use remote::RemoteBackend;

/// Language code returned when a provider abstains.
pub const UNDETERMINED: &str = "und";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Capability {
    LangId,
    Translate,
    WordAlign,
    Phonetize,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::LangId => "LangId",
            Capability::Translate => "Translate",
            Capability::WordAlign => "WordAlign",
            Capability::Phonetize => "Phonetize",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub capability: Capability,
    pub texts: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl ProviderRequest {
    pub fn lang_id(text: &str) -> Self {
        Self {
            capability: Capability::LangId,
            texts: vec![text.to_owned()],
            params: BTreeMap::new(),
        }
    }

    pub fn translate(sentence: &str, source: &str, target: &str) -> Self {
        Self {
            capability: Capability::Translate,
            texts: vec![sentence.to_owned()],
            params: BTreeMap::from([
                ("source".to_owned(), source.to_owned()),
                ("target".to_owned(), target.to_owned()),
            ]),
        }
    }

    pub fn word_align(source_sentence: &str, target_sentence: &str) -> Self {
        Self {
            capability: Capability::WordAlign,
            texts: vec![source_sentence.to_owned(), target_sentence.to_owned()],
            params: BTreeMap::new(),
        }
    }

    pub fn phonetize(text: &str, language: &str) -> Self {
        Self {
            capability: Capability::Phonetize,
            texts: vec![text.to_owned()],
            params: BTreeMap::from([("language".to_owned(), language.to_owned())]),
        }
    }

    pub fn param(&self, name: &str) -> Option<&str> {
        self.params.get(name).map(String::as_str)
    }

    /// Checks that the capability's required texts and parameters are present.
    pub fn validate(&self) -> Result<(), ProviderError> {
        let (texts, params): (usize, &[&str]) = match self.capability {
            Capability::LangId => (1, &[]),
            Capability::Translate => (1, &["source", "target"]),
            Capability::WordAlign => (2, &[]),
            Capability::Phonetize => (1, &["language"]),
        };
        if self.texts.len() != texts {
            return Err(ProviderError::InvalidRequest(format!(
                "{} takes {texts} text(s), got {}",
                self.capability,
                self.texts.len()
            )));
        }
        if let Some(missing) = params.iter().find(|p| !self.params.contains_key(**p)) {
            return Err(ProviderError::InvalidRequest(format!(
                "{} requires parameter {missing:?}",
                self.capability
            )));
        }
        Ok(())
    }
}

impl fmt::Display for ProviderRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({:?}", self.capability, self.texts)?;
        for (k, v) in &self.params {
            write!(f, ", {k}={v}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderResponse {
    Language(String),
    Translation(String),
    Alignment(Vec<(usize, usize)>),
    Phones(Vec<String>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("no recorded response for {0}")]
    Uncached(String),
    #[error("empty input")]
    EmptyInput,
    #[error("unsupported language {0}")]
    UnsupportedLanguage(String),
    #[error("unsupported language pair {source_lang} -> {target_lang}")]
    UnsupportedLanguagePair {
        source_lang: String,
        target_lang: String,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
}

/// Error body exchanged by the HTTP and command-bridge wire protocols.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireError {
    pub kind: String,
    #[serde(default)]
    pub message: String,
}

/// One reply on the wire: `{"ok": <response>}` or `{"error": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireReply {
    Ok(ProviderResponse),
    Error(WireError),
}

impl WireReply {
    pub(crate) fn into_result(
        self,
        request: &ProviderRequest,
    ) -> Result<ProviderResponse, ProviderError> {
        match self {
            WireReply::Ok(r) => Ok(r),
            WireReply::Error(e) => Err(match e.kind.as_str() {
                "unsupported_language" => ProviderError::UnsupportedLanguage(
                    request.param("language").unwrap_or(&e.message).to_owned(),
                ),
                "unsupported_language_pair" => ProviderError::UnsupportedLanguagePair {
                    source_lang: request.param("source").unwrap_or_default().to_owned(),
                    target_lang: request.param("target").unwrap_or_default().to_owned(),
                },
                "empty_input" => ProviderError::EmptyInput,
                "invalid_request" => ProviderError::InvalidRequest(e.message),
                _ => ProviderError::Unavailable(format!("{}: {}", e.kind, e.message)),
            }),
        }
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}

/// Strips tokenizer space markers (SentencePiece `▁`, byte-level `Ġ`/`Ċ`,
/// plain whitespace) from both ends of a token.
pub fn strip_token_markers(token: &str) -> &str {
    token.trim_matches(|c: char| {
        matches!(c, '\u{2581}' | '\u{0120}' | '\u{010A}') || c.is_whitespace()
    })
}

/// Capability router with request validation in front of the backends.
#[derive(Clone)]
pub struct Providers {
    langid: Arc<dyn Backend>,
    translate: Arc<dyn Backend>,
    align: Arc<dyn Backend>,
    g2p: Arc<dyn Backend>,
}

impl fmt::Debug for Providers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Providers")
            .field("langid", &self.langid.name())
            .field("translate", &self.translate.name())
            .field("align", &self.align.name())
            .field("g2p", &self.g2p.name())
            .finish()
    }
}

impl Providers {
    pub fn new(
        langid: Arc<dyn Backend>,
        translate: Arc<dyn Backend>,
        align: Arc<dyn Backend>,
        g2p: Arc<dyn Backend>,
    ) -> Self {
        Self {
            langid,
            translate,
            align,
            g2p,
        }
    }

    /// Routes every capability to one backend.
    pub fn uniform(backend: Arc<dyn Backend>) -> Self {
        Self::new(backend.clone(), backend.clone(), backend.clone(), backend)
    }

    pub fn identify_language(&self, text: &str) -> Result<String, ProviderError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        match self.langid.call(&ProviderRequest::lang_id(text))? {
            ProviderResponse::Language(code) if code.trim().is_empty() => {
                Ok(UNDETERMINED.to_owned())
            }
            ProviderResponse::Language(code) => Ok(code),
            other => Err(unexpected("language", &other)),
        }
    }

    /// Language of a vocabulary token; marker-only tokens are `und` without a provider call.
    pub fn identify_token_language(&self, token: &str) -> Result<String, ProviderError> {
        match self.identify_language(strip_token_markers(token)) {
            Err(ProviderError::EmptyInput) => Ok(UNDETERMINED.to_owned()),
            other => other,
        }
    }

    pub fn translate(
        &self,
        sentence: &str,
        source: &str,
        target: &str,
    ) -> Result<String, ProviderError> {
        if source == target {
            return Err(ProviderError::InvalidRequest(format!(
                "source and target are both {source}"
            )));
        }
        if !is_known_language(source) || !is_known_language(target) {
            return Err(ProviderError::UnsupportedLanguagePair {
                source_lang: source.to_owned(),
                target_lang: target.to_owned(),
            });
        }
        match self
            .translate
            .call(&ProviderRequest::translate(sentence, source, target))?
        {
            ProviderResponse::Translation(t) => Ok(t),
            other => Err(unexpected("translation", &other)),
        }
    }

    /// Word index pairs between two whitespace-tokenized sentences.
    pub fn align_words(
        &self,
        source_sentence: &str,
        target_sentence: &str,
    ) -> Result<Vec<(usize, usize)>, ProviderError> {
        let n_source = source_sentence.split_whitespace().count();
        let n_target = target_sentence.split_whitespace().count();
        if n_source == 0 || n_target == 0 {
            return Err(ProviderError::InvalidRequest(
                "alignment needs two non-empty sentences".into(),
            ));
        }
        match self.align.call(&ProviderRequest::word_align(
            source_sentence,
            target_sentence,
        ))? {
            ProviderResponse::Alignment(pairs) => {
                if let Some(&(s, t)) = pairs.iter().find(|&&(s, t)| s >= n_source || t >= n_target)
                {
                    return Err(ProviderError::InvalidResponse(format!(
                        "alignment pair ({s}, {t}) out of range for {n_source}x{n_target} words"
                    )));
                }
                Ok(pairs)
            }
            other => Err(unexpected("alignment", &other)),
        }
    }

    pub fn phonetize(&self, text: &str, language: &str) -> Result<Vec<String>, ProviderError> {
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        match self.g2p.call(&ProviderRequest::phonetize(text, language))? {
            ProviderResponse::Phones(p) => Ok(p),
            other => Err(unexpected("phones", &other)),
        }
    }
}

fn unexpected(wanted: &str, got: &ProviderResponse) -> ProviderError {
    ProviderError::InvalidResponse(format!("expected {wanted}, got {got:?}"))
}
