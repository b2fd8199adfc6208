use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, InterchangeError, Result};

/// Rounding slack allowed when checking that a phone sits inside its word.
pub const SPAN_TOLERANCE_MS: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan {
    pub surface: String,
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneSpan {
    pub phone: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub parent_word_index: usize,
}

/// A sentence translation with (source word, target word) index pairs.
///
/// Target indices refer to the whitespace-separated words of `sentence`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedTranslation {
    pub sentence: String,
    pub alignment: Vec<(usize, usize)>,
}

impl AlignedTranslation {
    pub fn target_words(&self) -> Vec<&str> {
        self.sentence.split_whitespace().collect()
    }

    /// Target words aligned to `source_index`, in alignment order.
    pub fn aligned_to(&self, source_index: usize) -> Vec<&str> {
        let words = self.target_words();
        self.alignment
            .iter()
            .filter(|(s, _)| *s == source_index)
            .filter_map(|&(_, t)| words.get(t).copied())
            .collect()
    }
}

/// Ground truth for one utterance: forced-aligned words and phones plus
/// word-aligned translations keyed by target language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub language: String,
    pub transcript_words: Vec<WordSpan>,
    #[serde(default)]
    pub transcript_phones: Vec<PhoneSpan>,
    #[serde(default)]
    pub translations: BTreeMap<String, AlignedTranslation>,
}

impl UtteranceRecord {
    pub fn load(path: &Path) -> Result<Self> {
        let record: Self = read_json(path)?;
        record.validate()?;
        Ok(record)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.transcript_words.iter().map(|w| w.surface.as_str())
    }

    pub fn phones_of(&self, word_index: usize) -> impl Iterator<Item = &PhoneSpan> {
        self.transcript_phones
            .iter()
            .filter(move |p| p.parent_word_index == word_index)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| InterchangeError::InvariantViolation {
            utterance_id: self.utterance_id.clone(),
            reason,
        };
        let mut previous_end = 0;
        for (i, w) in self.transcript_words.iter().enumerate() {
            if w.start_ms >= w.end_ms {
                return Err(fail(format!(
                    "word {i} ({}) has empty or inverted span [{}, {})",
                    w.surface, w.start_ms, w.end_ms
                )));
            }
            if i > 0 && w.start_ms < previous_end {
                return Err(fail(format!(
                    "word {i} ({}) starts at {} before the previous word ends at {previous_end}",
                    w.surface, w.start_ms
                )));
            }
            previous_end = w.end_ms;
        }
        for (i, p) in self.transcript_phones.iter().enumerate() {
            let Some(parent) = self.transcript_words.get(p.parent_word_index) else {
                return Err(fail(format!(
                    "phone {i} ({}) points at missing word {}",
                    p.phone, p.parent_word_index
                )));
            };
            let inside = p.start_ms + SPAN_TOLERANCE_MS >= parent.start_ms
                && p.end_ms <= parent.end_ms + SPAN_TOLERANCE_MS
                && p.start_ms <= p.end_ms;
            if !inside {
                return Err(fail(format!(
                    "phone {i} ({}) span [{}, {}) escapes word {} span [{}, {})",
                    p.phone,
                    p.start_ms,
                    p.end_ms,
                    p.parent_word_index,
                    parent.start_ms,
                    parent.end_ms
                )));
            }
        }
        let n_source = self.transcript_words.len();
        for (lang, t) in &self.translations {
            let n_target = t.target_words().len();
            if let Some(&(s, tg)) = t
                .alignment
                .iter()
                .find(|&&(s, tg)| s >= n_source || tg >= n_target)
            {
                return Err(fail(format!(
                    "{lang} alignment pair ({s}, {tg}) out of range ({n_source} source, {n_target} target words)"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> UtteranceRecord {
        UtteranceRecord {
            utterance_id: "u1".into(),
            language: "fr".into(),
            transcript_words: vec![
                WordSpan {
                    surface: "il".into(),
                    start_ms: 0,
                    end_ms: 200,
                },
                WordSpan {
                    surface: "est".into(),
                    start_ms: 200,
                    end_ms: 500,
                },
            ],
            transcript_phones: vec![
                PhoneSpan {
                    phone: "i".into(),
                    start_ms: 0,
                    end_ms: 100,
                    parent_word_index: 0,
                },
                PhoneSpan {
                    phone: "l".into(),
                    start_ms: 100,
                    end_ms: 201,
                    parent_word_index: 0,
                },
                PhoneSpan {
                    phone: "ɛ".into(),
                    start_ms: 200,
                    end_ms: 500,
                    parent_word_index: 1,
                },
            ],
            translations: BTreeMap::from([(
                "en".to_string(),
                AlignedTranslation {
                    sentence: "he is".into(),
                    alignment: vec![(0, 0), (1, 1)],
                },
            )]),
        }
    }

    #[test]
    fn valid_record_passes_with_one_ms_slack() {
        record().validate().unwrap();
    }

    #[test]
    fn phone_escaping_word_by_5ms_is_rejected() {
        let mut r = record();
        r.transcript_phones[1].end_ms = 205;
        let err = r.validate().unwrap_err();
        assert!(
            matches!(err, InterchangeError::InvariantViolation { ref utterance_id, .. } if utterance_id == "u1")
        );
    }

    #[test]
    fn overlapping_words_rejected() {
        let mut r = record();
        r.transcript_words[1].start_ms = 150;
        assert!(r.validate().is_err());
    }

    #[test]
    fn alignment_out_of_range_rejected() {
        let mut r = record();
        r.translations.get_mut("en").unwrap().alignment.push((1, 2));
        assert!(r.validate().is_err());
    }

    #[test]
    fn aligned_words_follow_pairs() {
        let t = AlignedTranslation {
            sentence: "he him died".into(),
            alignment: vec![(0, 0), (2, 1), (2, 2)],
        };
        assert_eq!(t.aligned_to(2), ["him", "died"]);
        assert!(t.aligned_to(1).is_empty());
    }

    #[test]
    fn json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u1.json");
        record().save(&path).unwrap();
        assert_eq!(UtteranceRecord::load(&path).unwrap(), record());
    }
}
