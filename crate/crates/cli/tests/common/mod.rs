#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use malens_core::interchange::{
    AlignedTranslation, CorpusManifest, EmbeddingMatrix, ManifestEntry, PhoneSpan,
    RepresentationSequence, UtteranceRecord, WordSpan,
};
use malens_core::providers::{ProviderRequest, ProviderResponse};
use malens_core::Stage;

pub fn malens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_malens"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn malens")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// One utterance to write: ground truth plus frames per stage.
pub struct UtteranceSpec {
    pub record: UtteranceRecord,
    pub frame_ms: u32,
    pub dim: usize,
    pub frames: BTreeMap<Stage, Vec<f32>>,
}

pub fn words(spans: &[(&str, u64, u64)]) -> Vec<WordSpan> {
    spans
        .iter()
        .map(|&(s, a, b)| WordSpan {
            surface: s.to_owned(),
            start_ms: a,
            end_ms: b,
        })
        .collect()
}

pub fn record(
    id: &str,
    language: &str,
    words: Vec<WordSpan>,
    phones: Vec<PhoneSpan>,
) -> UtteranceRecord {
    UtteranceRecord {
        utterance_id: id.to_owned(),
        language: language.to_owned(),
        transcript_words: words,
        transcript_phones: phones,
        translations: BTreeMap::new(),
    }
}

/// Writes matrix, records, sequences and manifest under `dir`; returns the manifest path.
pub fn write_corpus(
    dir: &Path,
    corpus_id: &str,
    language: &str,
    matrix: &EmbeddingMatrix,
    utterances: &[UtteranceSpec],
) -> PathBuf {
    std::fs::create_dir_all(dir.join("records")).unwrap();
    std::fs::create_dir_all(dir.join("sequences")).unwrap();
    matrix.write(&dir.join("embeddings.bin")).unwrap();
    let mut entries = Vec::new();
    for u in utterances {
        let id = &u.record.utterance_id;
        let record_path = PathBuf::from("records").join(format!("{id}.json"));
        u.record.save(&dir.join(&record_path)).unwrap();
        let mut sequences = BTreeMap::new();
        for (&stage, frames) in &u.frames {
            let rel = PathBuf::from("sequences").join(format!("{id}.{stage}.bin"));
            RepresentationSequence::new(id.clone(), stage, u.frame_ms, u.dim, frames.clone())
                .unwrap()
                .write(&dir.join(&rel))
                .unwrap();
            sequences.insert(stage, rel);
        }
        entries.push(ManifestEntry {
            record: record_path,
            sequences,
        });
    }
    let manifest = CorpusManifest {
        corpus_id: corpus_id.to_owned(),
        model_id: "synthetic".to_owned(),
        language: language.to_owned(),
        embedding_matrix_path: PathBuf::from("embeddings.bin"),
        utterances: entries,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path).unwrap();
    path
}

pub fn write_fixtures(path: &Path, pairs: &[(ProviderRequest, ProviderResponse)]) {
    let mut f = std::fs::File::create(path).unwrap();
    for (request, response) in pairs {
        let line = serde_json::json!({ "request": request, "response": response });
        writeln!(f, "{line}").unwrap();
    }
}

pub fn write_vec(path: &Path, dim: usize, entries: &[(&str, Vec<f32>)]) {
    let mut f = std::fs::File::create(path).unwrap();
    writeln!(f, "{} {dim}", entries.len()).unwrap();
    for (word, v) in entries {
        assert_eq!(v.len(), dim);
        let values: Vec<String> = v.iter().map(|x| format!("{x:.9}")).collect();
        writeln!(f, "{word} {}", values.join(" ")).unwrap();
    }
}

pub fn one_hot(dim: usize, i: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// `c * e_a + sqrt(1 - c^2) * e_b`: unit norm, cosine `c` with `e_a`.
pub fn blend(dim: usize, a: usize, b: usize, c: f32) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[a] = c;
    v[b] = (1.0 - c * c).sqrt();
    v
}

pub const WALKTHROUGH_SENTENCE: &str = "il est mort à osaka mardi";

pub const WALKTHROUGH_VERDICTS: [(&str, &str); 6] = [
    ("il", "Semantic"),
    ("est", "Unclear"),
    ("mort", "Translated"),
    ("à", "Unclear"),
    ("osaka", "Unclear"),
    ("mardi", "Semantic"),
];

/// Cosines the semantic step reports for each word.
pub const WALKTHROUGH_SIMILARITIES: [&[f64]; 6] =
    [&[0.68], &[0.17], &[], &[0.07], &[0.14, 0.12], &[0.74]];

/// A laid-out fixture directory.
pub struct Fixture {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub manifest: PathBuf,
    pub providers: PathBuf,
}

impl Fixture {
    pub fn config_arg(&self) -> String {
        self.config.display().to_string()
    }

    pub fn out_dir(&self) -> PathBuf {
        self.dir.join("out")
    }
}

pub fn walkthrough_requests() -> Vec<(ProviderRequest, ProviderResponse)> {
    let lang = |t: &str, l: &str| {
        (
            ProviderRequest::lang_id(t),
            ProviderResponse::Language(l.to_owned()),
        )
    };
    let en = "he him died ‖ cal Sunday";
    let ru = "он умер в Осаке во вторник";
    vec![
        lang("щё", "ru"),
        lang("him", "en"),
        lang("died", "en"),
        lang("in", "en"),
        lang("Osaka", "en"),
        lang("Tuesday", "en"),
        (
            ProviderRequest::translate(WALKTHROUGH_SENTENCE, "fr", "en"),
            ProviderResponse::Translation(en.to_owned()),
        ),
        (
            ProviderRequest::word_align(WALKTHROUGH_SENTENCE, en),
            ProviderResponse::Alignment(vec![
                (0, 0),
                (2, 1),
                (2, 2),
                (3, 2),
                (3, 3),
                (4, 3),
                (4, 4),
                (5, 5),
            ]),
        ),
        (
            ProviderRequest::translate(WALKTHROUGH_SENTENCE, "fr", "ru"),
            ProviderResponse::Translation(ru.to_owned()),
        ),
        (
            ProviderRequest::word_align(WALKTHROUGH_SENTENCE, ru),
            ProviderResponse::Alignment(vec![(0, 0), (2, 1), (3, 2), (4, 3), (5, 5)]),
        ),
    ]
}

/// The French sentence "il est mort à osaka mardi" at 340 ms per frame.
///
/// Each of the six frames is exactly one vocabulary row, so the top-1
/// tokens are fixed by construction: щё, him, died, in, Osaka, Tuesday.
/// The second frame straddles "il" and "est" and lands in both.
pub fn walkthrough(dir: &Path) -> Fixture {
    std::fs::create_dir_all(dir).unwrap();
    let vocab = ["щё", "him", "died", "in", "Osaka", "Tuesday", "▁the", "▁of"];
    let n = vocab.len();
    let rows: Vec<f32> = (0..n).flat_map(|i| one_hot(n, i)).collect();
    let matrix =
        EmbeddingMatrix::new(n, rows, vocab.iter().map(|s| s.to_string()).collect()).unwrap();
    let rec = record(
        "fr-0001",
        "fr",
        words(&[
            ("il", 0, 500),
            ("est", 500, 680),
            ("mort", 680, 1020),
            ("à", 1020, 1360),
            ("osaka", 1360, 1700),
            ("mardi", 1700, 2040),
        ]),
        vec![],
    );
    let frames: Vec<f32> = (0..6).flat_map(|i| one_hot(n, i)).collect();
    let manifest = write_corpus(
        &dir.join("corpus"),
        "walkthrough-fr",
        "fr",
        &matrix,
        &[UtteranceSpec {
            record: rec,
            frame_ms: 340,
            dim: n,
            frames: BTreeMap::from([(Stage::AdapterOutput, frames)]),
        }],
    );

    let d = 12;
    let s = |c: f32| (1.0 - c * c).sqrt();
    let mut il = one_hot(d, 0);
    il[0] = 0.68;
    il[8] = s(0.68);
    write_vec(
        &dir.join("en.vec"),
        d,
        &[
            ("him", one_hot(d, 0)),
            ("in", one_hot(d, 1)),
            ("Osaka", one_hot(d, 2)),
            ("Tuesday", one_hot(d, 3)),
            ("‖", blend(d, 2, 4, 0.14)),
            ("cal", blend(d, 2, 5, 0.12)),
            ("he", one_hot(d, 6)),
            ("died", one_hot(d, 7)),
        ],
    );
    write_vec(
        &dir.join("fr.vec"),
        d,
        &[
            ("il", il),
            ("est", blend(d, 0, 9, 0.17)),
            ("à", blend(d, 1, 10, 0.07)),
            ("mardi", blend(d, 3, 11, 0.74)),
            ("mort", one_hot(d, 7)),
        ],
    );
    let providers = dir.join("providers.jsonl");
    write_fixtures(&providers, &walkthrough_requests());
    let config = dir.join("malens.toml");
    std::fs::write(
        &config,
        r#"corpus = "corpus/manifest.json"
output_dir = "out"
seed = 7

[providers]
langid = { backend = "fixture", path = "providers.jsonl" }
translate = { backend = "fixture", path = "providers.jsonl" }
align = { backend = "fixture", path = "providers.jsonl" }

[space.files]
en = "en.vec"
fr = "fr.vec"

[verdict]
normalization = "Exact"
enable_steps = ["3a", "3b", "3c"]
"#,
    )
    .unwrap();
    Fixture {
        dir: dir.to_path_buf(),
        config,
        manifest,
        providers,
    }
}

/// Reads the per-word verdict labels a `verdicts` run wrote.
pub fn read_verdicts(out: &Path) -> Vec<(String, String, Vec<f64>)> {
    let text = std::fs::read_to_string(out.join("verdicts").join("verdicts.json")).unwrap();
    let run: serde_json::Value = serde_json::from_str(&text).unwrap();
    run["verdicts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| {
            (
                v["surface"].as_str().unwrap().to_owned(),
                v["verdict"].as_str().unwrap().to_owned(),
                v["similarities"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|x| x.as_f64().unwrap())
                    .collect(),
            )
        })
        .collect()
}

/// `AlignedTranslation` helper for records that carry their own translations.
pub fn aligned(sentence: &str, alignment: &[(usize, usize)]) -> AlignedTranslation {
    AlignedTranslation {
        sentence: sentence.to_owned(),
        alignment: alignment.to_vec(),
    }
}
