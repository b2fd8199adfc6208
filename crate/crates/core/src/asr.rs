//! Scoring of model transcriptions: word error rate and language match.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::interchange::{read_json, InterchangeError};
use crate::providers::{ProviderError, Providers};

#[derive(Debug, Error)]
pub enum AsrError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("no hypotheses to score")]
    NoHypotheses,
    #[error("hypothesis for unknown utterance {0}")]
    UnknownUtterance(String),
    #[error("utterance {0} has no hypothesis")]
    MissingHypothesis(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Interchange(#[from] InterchangeError),
}

/// Unit-cost edit distance between two token sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let next = if x == y {
                diag
            } else {
                1 + diag.min(row[j]).min(row[j + 1])
            };
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// (S + D + I) / |reference|. Can exceed 1.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64, AsrError> {
    if reference.is_empty() {
        return Err(AsrError::EmptyReference);
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScheme {
    #[default]
    Whitespace,
    /// One token per extended grapheme cluster, whitespace dropped.
    Char,
}

/// How text is split and normalised before scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WerOptions {
    pub scheme: TokenScheme,
    /// Per-language scheme, e.g. `{"th": "char"}`.
    pub overrides: BTreeMap<String, TokenScheme>,
    pub casefold: bool,
}

impl Default for WerOptions {
    fn default() -> Self {
        Self {
            scheme: TokenScheme::Whitespace,
            overrides: BTreeMap::new(),
            casefold: true,
        }
    }
}

impl WerOptions {
    /// Character scoring for the common unsegmented scripts.
    pub fn with_char_scripts(mut self) -> Self {
        for lang in ["ja", "th", "zh"] {
            self.overrides.insert(lang.to_owned(), TokenScheme::Char);
        }
        self
    }

    pub fn scheme_for(&self, language: &str) -> TokenScheme {
        self.overrides.get(language).copied().unwrap_or(self.scheme)
    }

    pub fn tokenize(&self, text: &str, language: &str) -> Vec<String> {
        let text = if self.casefold {
            text.to_lowercase()
        } else {
            text.to_owned()
        };
        tokenize_for_wer(&text, self.scheme_for(language))
    }
}

fn is_edge_punct(g: &str) -> bool {
    g.chars().all(|c| !c.is_alphanumeric())
}

/// Splits `text` into scoring tokens. Whitespace tokens lose leading and
/// trailing punctuation; tokens that are all punctuation disappear.
pub fn tokenize_for_wer(text: &str, scheme: TokenScheme) -> Vec<String> {
    match scheme {
        TokenScheme::Whitespace => text
            .split_whitespace()
            .filter_map(|word| {
                let graphemes: Vec<&str> = word.graphemes(true).collect();
                let start = graphemes.iter().position(|g| !is_edge_punct(g))?;
                let end = graphemes.iter().rposition(|g| !is_edge_punct(g))?;
                Some(graphemes[start..=end].concat())
            })
            .collect(),
        TokenScheme::Char => text
            .graphemes(true)
            .filter(|g| !g.chars().all(char::is_whitespace))
            .map(str::to_owned)
            .collect(),
    }
}

/// Model transcriptions for one corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSet {
    pub model_id: String,
    pub language: String,
    pub hypotheses: BTreeMap<String, String>,
}

impl HypothesisSet {
    pub fn load(path: &Path) -> Result<Self, AsrError> {
        Ok(read_json(path)?)
    }
}

/// Percentage of hypotheses identified as `expected`. Empty hypotheses
/// count as mismatches without a provider call.
pub fn lang_match_rate(
    hypotheses: &HypothesisSet,
    expected: &str,
    providers: &Providers,
) -> Result<f64, AsrError> {
    if hypotheses.hypotheses.is_empty() {
        return Err(AsrError::NoHypotheses);
    }
    let texts: Vec<&String> = hypotheses.hypotheses.values().collect();
    let matches = texts
        .par_iter()
        .map(|text| {
            if text.trim().is_empty() {
                return Ok(0usize);
            }
            Ok(usize::from(providers.identify_language(text)? == expected))
        })
        .collect::<Result<Vec<_>, ProviderError>>()?
        .into_iter()
        .sum::<usize>();
    Ok(100.0 * matches as f64 / texts.len() as f64)
}

/// One row of the ASR table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrRow {
    pub corpus_id: String,
    pub model_id: String,
    pub language: String,
    pub utterances: usize,
    /// Corpus-level WER: total edits over total reference tokens, in percent.
    pub wer_percent: f64,
    pub lang_percent: Option<f64>,
}

/// Scores `hypotheses` against `references` (utterance id to transcript).
/// Every reference needs a hypothesis and vice versa.
pub fn score_corpus(
    corpus_id: &str,
    references: &BTreeMap<String, String>,
    hypotheses: &HypothesisSet,
    options: &WerOptions,
    providers: Option<&Providers>,
) -> Result<AsrRow, AsrError> {
    if let Some(id) = hypotheses
        .hypotheses
        .keys()
        .find(|id| !references.contains_key(*id))
    {
        return Err(AsrError::UnknownUtterance(id.clone()));
    }
    let pairs = references
        .iter()
        .map(|(id, r)| {
            hypotheses
                .hypotheses
                .get(id)
                .map(|h| (r, h))
                .ok_or_else(|| AsrError::MissingHypothesis(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if pairs.is_empty() {
        return Err(AsrError::NoHypotheses);
    }
    let lang = &hypotheses.language;
    let (edits, total) = pairs
        .par_iter()
        .map(|(r, h)| {
            let r = options.tokenize(r, lang);
            let h = options.tokenize(h, lang);
            (edit_distance(&r, &h), r.len())
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 {
        return Err(AsrError::EmptyReference);
    }
    let lang_percent = providers
        .map(|p| lang_match_rate(hypotheses, lang, p))
        .transpose()?;
    Ok(AsrRow {
        corpus_id: corpus_id.to_owned(),
        model_id: hypotheses.model_id.clone(),
        language: lang.clone(),
        utterances: pairs.len(),
        wer_percent: 100.0 * edits as f64 / total as f64,
        lang_percent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{Backend, ProviderRequest, ProviderResponse};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn dp_oracle(a: &[u8], b: &[u8]) -> usize {
        let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in t.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            t[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
            }
        }
        t[a.len()][b.len()]
    }

    #[test]
    fn identity_and_insertions() {
        assert_eq!(wer(&["a", "b", "c"], &["a", "b", "c"]).unwrap(), 0.0);
        assert_eq!(wer(&["a"], &["a", "b", "c"]).unwrap(), 2.0);
        assert_eq!(wer(&["a", "b"], &[] as &[&str]).unwrap(), 1.0);
        assert!(matches!(
            wer::<&str>(&[], &["a"]),
            Err(AsrError::EmptyReference)
        ));
    }

    #[test]
    fn not_symmetric() {
        let r = ["a"];
        let h = ["a", "b", "c"];
        assert_ne!(wer(&r, &h).unwrap(), wer(&h, &r).unwrap());
    }

    #[test]
    fn tokenization() {
        assert_eq!(
            tokenize_for_wer("il est mort", TokenScheme::Whitespace),
            ["il", "est", "mort"]
        );
        assert_eq!(
            tokenize_for_wer("你好吗", TokenScheme::Char),
            ["你", "好", "吗"]
        );
        assert_eq!(
            tokenize_for_wer("ne marche plus.", TokenScheme::Whitespace),
            ["ne", "marche", "plus"]
        );
        assert_eq!(
            tokenize_for_wer("« c'est » - l'été!", TokenScheme::Whitespace),
            ["c'est", "l'été"]
        );
        assert_eq!(tokenize_for_wer("e\u{301}té", TokenScheme::Char).len(), 3);
    }

    #[test]
    fn options_casefold_and_overrides() {
        let o = WerOptions::default().with_char_scripts();
        assert_eq!(o.tokenize("Il Est", "fr"), ["il", "est"]);
        assert_eq!(
            o.tokenize("สวัสดี ครับ", "th").len(),
            "สวัสดีครับ".graphemes(true).count()
        );
        assert_eq!(
            WerOptions::default().scheme_for("th"),
            TokenScheme::Whitespace
        );
    }

    struct ByPrefix;

    impl Backend for ByPrefix {
        fn name(&self) -> &str {
            "prefix"
        }

        fn call(&self, r: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
            let lang = if r.texts[0].starts_with("fr:") {
                "fr"
            } else {
                "en"
            };
            Ok(ProviderResponse::Language(lang.into()))
        }
    }

    fn hyps(texts: &[&str]) -> HypothesisSet {
        HypothesisSet {
            model_id: "m".into(),
            language: "fr".into(),
            hypotheses: texts
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("u{i:02}"), t.to_string()))
                .collect(),
        }
    }

    #[test]
    fn language_match_counts() {
        let p = Providers::uniform(Arc::new(ByPrefix));
        let mut texts = vec!["fr: oui"; 4];
        texts.extend(["en: yes"; 5]);
        texts.push("  ");
        assert_eq!(lang_match_rate(&hyps(&texts), "fr", &p).unwrap(), 40.0);
        assert_eq!(
            lang_match_rate(&hyps(&["fr: a", "fr: b"]), "fr", &p).unwrap(),
            100.0
        );
        assert_eq!(lang_match_rate(&hyps(&["en: a"]), "fr", &p).unwrap(), 0.0);
    }

    #[test]
    fn corpus_scoring() {
        let refs: BTreeMap<String, String> = [("u00", "il est mort"), ("u01", "mardi")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let row = score_corpus(
            "c",
            &refs,
            &hyps(&["il est", "mardi soir"]),
            &WerOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(row.wer_percent, 50.0);
        assert_eq!(row.utterances, 2);
        assert!(matches!(
            score_corpus("c", &refs, &hyps(&["il"]), &WerOptions::default(), None),
            Err(AsrError::MissingHypothesis(_))
        ));
    }

    proptest! {
        #[test]
        fn equals_dp_oracle(a in proptest::collection::vec(0u8..5, 1..30), b in proptest::collection::vec(0u8..5, 0..30)) {
            prop_assert_eq!(edit_distance(&a, &b), dp_oracle(&a, &b));
        }

        #[test]
        fn triangle_bound(
            a in proptest::collection::vec(0u8..4, 0..15),
            b in proptest::collection::vec(0u8..4, 0..15),
            c in proptest::collection::vec(0u8..4, 0..15),
        ) {
            prop_assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        }

        #[test]
        fn relabeling_invariant(a in proptest::collection::vec(0u8..5, 1..20), b in proptest::collection::vec(0u8..5, 0..20), k in 1u8..7) {
            let map = |v: &[u8]| v.iter().map(|x| (x + k) % 7 + 100).collect::<Vec<_>>();
            prop_assert_eq!(wer(&a, &b).unwrap(), wer(&map(&a), &map(&b)).unwrap());
        }

        #[test]
        fn deleting_everything_is_one(a in proptest::collection::vec(0u8..5, 1..20)) {
            prop_assert_eq!(wer(&a, &[]).unwrap(), 1.0);
        }
    }
}
