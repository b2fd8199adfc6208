//! Table-driven grapheme-to-phoneme mapping.
//!
//! A table maps grapheme strings to phone lists. Conversion walks the word
//! left to right taking the longest matching grapheme; a key ending in `$`
//! only matches at the end of a word. Characters with no rule are skipped.

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{Backend, Capability, ProviderError, ProviderRequest, ProviderResponse};

const BUILTIN: &[(&str, &str)] = &[
    ("en", include_str!("../../data/g2p/en.json")),
    ("fr", include_str!("../../data/g2p/fr.json")),
    ("it", include_str!("../../data/g2p/it.json")),
];

#[derive(Debug, Deserialize)]
struct TableFile {
    language: String,
    rules: HashMap<String, Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct G2pTable {
    language: String,
    rules: HashMap<String, Vec<String>>,
    max_len: usize,
}

impl G2pTable {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let file: TableFile = serde_json::from_str(text)?;
        let max_len = file
            .rules
            .keys()
            .map(|k| k.trim_end_matches('$').chars().count())
            .max()
            .unwrap_or(1);
        Ok(Self {
            language: file.language,
            rules: file.rules,
            max_len,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn phonetize(&self, text: &str) -> Vec<String> {
        let mut phones = Vec::new();
        for word in text.split(|c: char| !c.is_alphabetic()) {
            self.phonetize_word(&word.to_lowercase(), &mut phones);
        }
        phones
    }

    fn phonetize_word(&self, word: &str, out: &mut Vec<String>) {
        let chars: Vec<char> = word.chars().collect();
        let mut i = 0;
        let mut key = String::new();
        while i < chars.len() {
            let mut matched = None;
            for len in (1..=self.max_len.min(chars.len() - i)).rev() {
                key.clear();
                key.extend(&chars[i..i + len]);
                if i + len == chars.len() {
                    key.push('$');
                    if let Some(p) = self.rules.get(&key) {
                        matched = Some((len, p));
                        break;
                    }
                    key.pop();
                }
                if let Some(p) = self.rules.get(&key) {
                    matched = Some((len, p));
                    break;
                }
            }
            match matched {
                Some((len, p)) => {
                    out.extend(p.iter().cloned());
                    i += len;
                }
                None => i += 1,
            }
        }
    }
}

/// G2P backend over per-language tables.
#[derive(Debug, Clone, Default)]
pub struct TableG2p {
    tables: HashMap<String, G2pTable>,
}

impl TableG2p {
    /// Tables shipped with the crate (`en`, `fr`, `it`).
    pub fn builtin() -> Self {
        let mut g = Self::default();
        for (_, text) in BUILTIN {
            g.insert(G2pTable::from_json(text).expect("builtin tables parse"));
        }
        g
    }

    /// Adds every `*.json` table found in `dir`, replacing same-language tables.
    pub fn load_dir(&mut self, dir: &Path) -> std::io::Result<()> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        entries.sort();
        for path in entries {
            let text = std::fs::read_to_string(&path)?;
            let table = G2pTable::from_json(&text).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                )
            })?;
            self.insert(table);
        }
        Ok(())
    }

    pub fn insert(&mut self, table: G2pTable) {
        self.tables.insert(table.language.clone(), table);
    }

    pub fn supports(&self, language: &str) -> bool {
        self.tables.contains_key(language)
    }
}

impl Backend for TableG2p {
    fn name(&self) -> &str {
        "table-g2p"
    }

    fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        request.validate()?;
        if request.capability != Capability::Phonetize {
            return Err(ProviderError::InvalidRequest(format!(
                "table G2P cannot serve {}",
                request.capability
            )));
        }
        let language = request.param("language").unwrap_or_default();
        let table = self
            .tables
            .get(language)
            .ok_or_else(|| ProviderError::UnsupportedLanguage(language.to_owned()))?;
        Ok(ProviderResponse::Phones(table.phonetize(&request.texts[0])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phones(g: &TableG2p, text: &str, lang: &str) -> Vec<String> {
        match g.call(&ProviderRequest::phonetize(text, lang)).unwrap() {
            ProviderResponse::Phones(p) => p,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vivez_has_four_phones() {
        assert_eq!(
            phones(&TableG2p::builtin(), "vivez", "fr"),
            ["v", "i", "v", "e"]
        );
    }

    #[test]
    fn french_examples() {
        let g = TableG2p::builtin();
        assert_eq!(phones(&g, "mari", "fr"), ["m", "a", "ʁ", "i"]);
        assert_eq!(phones(&g, "possible", "fr"), ["p", "o", "s", "i", "b", "l"]);
        assert_eq!(phones(&g, "mardi", "fr"), ["m", "a", "ʁ", "d", "i"]);
    }

    #[test]
    fn word_final_rules_only_fire_at_the_end() {
        let t = G2pTable::from_json(r#"{"language":"xx","rules":{"a":["a"],"s":["s"],"s$":[]}}"#)
            .unwrap();
        assert_eq!(t.phonetize("sas"), ["s", "a"]);
    }

    #[test]
    fn non_lexical_tokens_give_nothing() {
        let g = TableG2p::builtin();
        assert!(phones(&g, "▁", "en").is_empty());
        assert!(phones(&g, "+", "fr").is_empty());
    }

    #[test]
    fn unsupported_language() {
        assert_eq!(
            TableG2p::builtin().call(&ProviderRequest::phonetize("谄", "zh")),
            Err(ProviderError::UnsupportedLanguage("zh".into()))
        );
    }

    #[test]
    fn load_dir_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("yo.json"),
            r#"{"language":"yo","rules":{"p":["p"],"é":["e"]}}"#,
        )
        .unwrap();
        let mut g = TableG2p::builtin();
        g.load_dir(dir.path()).unwrap();
        assert!(g.supports("yo"));
        assert_eq!(phones(&g, "pé", "yo"), ["p", "e"]);
    }
}
