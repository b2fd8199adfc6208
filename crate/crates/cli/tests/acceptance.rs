//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs offline against frozen fixtures. Exits non-zero if any check fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use malens_core::analysis;
use malens_core::asr::{edit_distance, wer};
use malens_core::interchange::{
    expected_frame_count, load_corpus, load_representation_sequence, EmbeddingMatrix,
};
use malens_core::neighbor::NeighborIndex;
use malens_core::probes::{
    evaluate_probe, spearman, train_linear_probe, DatasetOptions, ProbeDataset, ProbeLevel, Split,
    TrainConfig,
};
use malens_core::providers::{Backend, FixtureBackend, Providers, TableG2p};
use malens_core::report::{parse_json, Axis, DistributionReport};
use malens_core::verdict::{
    classify_word, ordered_containment, transliteration_match, AlignedWords,
    MultilingualEmbeddingSpace, Normalization, Step, TokenObservation, WordContext,
};
use malens_core::{Stage, Verdict, VerdictConfig};

type Check = fn() -> Result<String, String>;

fn main() {
    let checks: [(&str, Check); 10] = [
        ("nearest token equals brute force", nearest_token_oracle),
        ("walkthrough verdicts", walkthrough_golden),
        ("transliteration figure and matcher oracle", transliteration),
        (
            "frame arithmetic through the interchange format",
            frame_arithmetic,
        ),
        ("WER engine", wer_engine),
        ("Spearman correlation", spearman_checks),
        ("probe sanity", probe_sanity),
        ("ladder monotonicity and precedence", ladder_properties),
        ("verdicts are byte-identical across runs", determinism),
        ("synthetic end-to-end recovery", synthetic_end_to_end),
    ];
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2}: PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    std::panic::set_hook(hook);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

/// Double-precision argmax of mean-centred cosine; first index wins ties.
fn brute_force_nearest(rows: &[Vec<f32>], query: &[f32]) -> Option<(usize, f64)> {
    let d = query.len();
    let mut mean = vec![0.0f64; d];
    for r in rows {
        for (m, &x) in mean.iter_mut().zip(r) {
            *m += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
    let q: Vec<f64> = query
        .iter()
        .zip(&mean)
        .map(|(&x, m)| f64::from(x) - m)
        .collect();
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    if qn == 0.0 {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rows.iter().enumerate() {
        let c: Vec<f64> = r
            .iter()
            .zip(&mean)
            .map(|(&x, m)| f64::from(x) - m)
            .collect();
        let cn = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if cn == 0.0 {
            continue;
        }
        let cos = q.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / (qn * cn);
        if best.is_none_or(|(_, b)| cos > b) {
            best = Some((i, cos));
        }
    }
    best
}

fn nearest_token_oracle() -> Result<String, String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..100 {
        let v = rng.random_range(2..=1000);
        let d = rng.random_range(1..=64);
        let rows: Vec<Vec<f32>> = (0..v)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            .collect();
        let matrix =
            EmbeddingMatrix::new(d, rows.concat(), (0..v).map(|i| format!("t{i}")).collect())
                .map_err(|e| e.to_string())?;
        let index = NeighborIndex::new(&matrix).map_err(|e| e.to_string())?;
        let query: Vec<f32> = if case % 2 == 0 {
            let base = &rows[rng.random_range(0..v)];
            base.iter()
                .map(|x| x + rng.random_range(-0.05f32..0.05))
                .collect()
        } else {
            (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()
        };
        let (want, want_sim) = brute_force_nearest(&rows, &query).ok_or("degenerate query")?;
        let got = index.nearest(&query, 0).map_err(|e| e.to_string())?;
        ensure(got.token_index == want, || {
            format!(
                "case {case} (V={v}, d={d}): index {} vs {want}",
                got.token_index
            )
        })?;
        ensure((got.similarity - want_sim).abs() <= 1e-5, || {
            format!("case {case}: similarity {} vs {want_sim}", got.similarity)
        })?;
    }
    let took = within(Duration::from_secs(10), started)?;
    Ok(format!("100 instances, {took:.2?}"))
}

fn walkthrough_space(dir: &Path) -> MultilingualEmbeddingSpace {
    let mut space = MultilingualEmbeddingSpace::default();
    space.load_vec("en", &dir.join("en.vec")).unwrap();
    space.load_vec("fr", &dir.join("fr.vec")).unwrap();
    space
}

fn walkthrough_golden() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = walkthrough(tmp.path());
    let space = walkthrough_space(tmp.path());
    let providers =
        Providers::uniform(Arc::new(FixtureBackend::from_pairs(walkthrough_requests())));
    let config = VerdictConfig {
        normalization: Normalization::Exact,
        ..VerdictConfig::default()
    }
    .with_steps([Step::Transcription, Step::Translation, Step::Semantic]);

    // Tokens, aligned translations and pivots as the walkthrough table lists them.
    let en: [&[&str]; 6] = [
        &["he"],
        &[],
        &["him", "died"],
        &["died", "‖"],
        &["‖", "cal"],
        &["Sunday"],
    ];
    let ru: [&[&str]; 6] = [&["он"], &[], &["умер"], &["в"], &["Осаке"], &["вторник"]];
    let tokens: [&[(&str, &str)]; 6] = [
        &[("щё", "ru"), ("him", "en")],
        &[("him", "en")],
        &[("died", "en")],
        &[("in", "en")],
        &[("Osaka", "en")],
        &[("Tuesday", "en")],
    ];
    for (i, ((word, want), want_sims)) in WALKTHROUGH_VERDICTS
        .iter()
        .zip(WALKTHROUGH_SIMILARITIES)
        .enumerate()
    {
        let strings = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let ctx = WordContext {
            word_index: i,
            word: word.to_string(),
            language: "fr".into(),
            tokens: tokens[i]
                .iter()
                .map(|(t, l)| TokenObservation::new(*t, *l))
                .collect(),
            aligned: vec![
                AlignedWords {
                    language: "en".into(),
                    words: strings(en[i]),
                },
                AlignedWords {
                    language: "ru".into(),
                    words: strings(ru[i]),
                },
            ],
            english_pivots: strings(en[i]),
        };
        let v = classify_word(&ctx, &config, &space, &providers).map_err(|e| e.to_string())?;
        ensure(v.verdict.as_str() == *want, || {
            format!("{word}: {} vs {want}", v.verdict)
        })?;
        let close = v.similarities.len() == want_sims.len()
            && v.similarities
                .iter()
                .zip(want_sims)
                .all(|(a, b)| (a - b).abs() < 1e-5);
        ensure(close, || {
            format!("{word}: similarities {:?} vs {want_sims:?}", v.similarities)
        })?;
    }

    // The same verdicts from the full pipeline, frames to reports.
    let corpus = load_corpus(&fx.manifest).map_err(|e| e.to_string())?;
    let mut assignments =
        analysis::compute_neighbors(&corpus, Stage::AdapterOutput).map_err(|e| e.to_string())?;
    analysis::label_languages(&mut assignments, &providers).map_err(|e| e.to_string())?;
    let run = analysis::run_verdicts(
        &corpus,
        &assignments,
        &providers,
        &space,
        &config,
        &Default::default(),
    )
    .map_err(|e| e.to_string())?;
    let got: Vec<(&str, &str)> = run
        .verdicts
        .iter()
        .map(|r| (r.surface.as_str(), r.verdict.as_str()))
        .collect();
    ensure(got == WALKTHROUGH_VERDICTS, || {
        format!("pipeline gave {got:?}")
    })?;
    Ok("6/6 words via classify_word and via the pipeline".into())
}

/// Textbook LCS table.
fn lcs_oracle(a: &[u8], b: &[u8]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

fn transliteration() -> Result<String, String> {
    let providers = Providers::uniform(Arc::new(TableG2p::builtin()) as Arc<dyn Backend>);
    let word_phones = providers
        .phonetize("vivez", "fr")
        .map_err(|e| e.to_string())?;
    ensure(word_phones == ["v", "i", "v", "e"], || {
        format!("vivez phones {word_phones:?}")
    })?;
    let ctx = WordContext {
        word_index: 0,
        word: "vivez".into(),
        language: "fr".into(),
        tokens: ["v", "Ave", "v"]
            .iter()
            .map(|t| TokenObservation::new(*t, "en"))
            .collect(),
        aligned: vec![],
        english_pivots: vec!["live".into()],
    };
    let space = MultilingualEmbeddingSpace::new(4);
    let inclusive = classify_word(&ctx, &VerdictConfig::default(), &space, &providers)
        .map_err(|e| e.to_string())?;
    ensure(inclusive.verdict == Verdict::Transliterated, || {
        format!("ratio 0.5 gave {}", inclusive.verdict)
    })?;
    let m = transliteration_match(&word_phones, &["v", "æ", "v", "v"], 0.5, false)
        .map_err(|e| e.to_string())?;
    ensure((m.matched, m.total) == (2, 4), || {
        format!("matched {}/{}", m.matched, m.total)
    })?;
    let strict = VerdictConfig {
        phone_match_strict: true,
        ..VerdictConfig::default()
    };
    let v = classify_word(&ctx, &strict, &space, &providers).map_err(|e| e.to_string())?;
    ensure(v.verdict == Verdict::Unclear, || {
        format!("strict ratio gave {}", v.verdict)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let alphabet = rng.random_range(1..=6u8);
        let a: Vec<u8> = (0..rng.random_range(1..=90))
            .map(|_| rng.random_range(0..alphabet))
            .collect();
        let b: Vec<u8> = (0..rng.random_range(0..=90))
            .map(|_| rng.random_range(0..alphabet))
            .collect();
        let sa: Vec<String> = a.iter().map(u8::to_string).collect();
        let sb: Vec<String> = b.iter().map(u8::to_string).collect();
        let got = ordered_containment(&sa, &sb);
        let want = lcs_oracle(&a, &b);
        ensure(got == want, || {
            format!("case {case}: {got} vs oracle {want}")
        })?;
    }
    Ok("vivez 2/4 matches at 0.5, not strictly; 1000 oracle instances agree".into())
}

fn frame_arithmetic() -> Result<String, String> {
    let n = expected_frame_count(30_000, 340).map_err(|e| e.to_string())?;
    ensure(n == 88, || format!("expected_frame_count gave {n}"))?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dim = 4;
    let vocab = 5;
    let matrix = EmbeddingMatrix::new(
        dim,
        (0..vocab * dim).map(|i| (i % 7) as f32 - 3.0).collect(),
        (0..vocab).map(|i| format!("t{i}")).collect(),
    )
    .map_err(|e| e.to_string())?;
    let frames: Vec<f32> = (0..88 * dim)
        .map(|i| ((i * 31) % 11) as f32 - 5.0)
        .collect();
    let manifest = write_corpus(
        tmp.path(),
        "frames",
        "fr",
        &matrix,
        &[UtteranceSpec {
            record: record("long", "fr", words(&[("mot", 0, 30_000)]), vec![]),
            frame_ms: 340,
            dim,
            frames: BTreeMap::from([(Stage::AdapterOutput, frames)]),
        }],
    );
    let seq_path: PathBuf = tmp.path().join("sequences").join("long.AdapterOutput.bin");
    let seq = load_representation_sequence(&seq_path).map_err(|e| e.to_string())?;
    ensure(seq.num_frames() == 88, || {
        format!("reloaded {} frames", seq.num_frames())
    })?;
    let corpus = load_corpus(&manifest).map_err(|e| e.to_string())?;
    let u = corpus.utterance(0).map_err(|e| e.to_string())?;
    let loaded = u
        .sequence(Stage::AdapterOutput)
        .ok_or("no adapter sequence")?;
    ensure(
        loaded.num_frames() == 88 && loaded.frame_ms() == 340,
        || "corpus view disagrees".into(),
    )?;
    let assignments =
        analysis::compute_neighbors(&corpus, Stage::AdapterOutput).map_err(|e| e.to_string())?;
    ensure(assignments[0].assignments.len() == 88, || {
        "assignment count".into()
    })?;
    Ok("30000 ms at 340 ms gives 88 frames, written, reloaded and assigned".into())
}

/// Full-table Levenshtein distance.
fn levenshtein_oracle(a: &[u8], b: &[u8]) -> usize {
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

fn wer_engine() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..500 {
        let vocab = rng.random_range(1..=8u8);
        let r: Vec<u8> = (0..rng.random_range(1..=40))
            .map(|_| rng.random_range(0..vocab))
            .collect();
        let h: Vec<u8> = (0..rng.random_range(0..=40))
            .map(|_| rng.random_range(0..vocab))
            .collect();
        let want = levenshtein_oracle(&r, &h);
        ensure(edit_distance(&r, &h) == want, || {
            format!("case {case}: distance mismatch")
        })?;
        let w = wer(&r, &h).map_err(|e| e.to_string())?;
        ensure(w == want as f64 / r.len() as f64, || {
            format!("case {case}: wer {w}")
        })?;
        ensure(wer(&r, &r).map_err(|e| e.to_string())? == 0.0, || {
            format!("case {case}: identity")
        })?;
    }
    let over = wer(&["a"], &["a", "b", "c"]).map_err(|e| e.to_string())?;
    ensure(over == 2.0, || format!("[a] vs [a b c] gave {over}"))?;
    Ok("500 oracle pairs, identity 0%, [a] vs [a b c] 200%".into())
}

/// Average ranks by sorting, then Pearson on the ranks.
fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (i, a) in v.iter().enumerate() {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            out[i] = less + (equal + 1.0) / 2.0;
        }
        out
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn spearman_checks() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in 3..60 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let up: Vec<f64> = x.iter().map(|v| v * 3.0 + 1.0).collect();
        let down: Vec<f64> = x.iter().map(|v| -v.powi(3)).collect();
        let rho_up = spearman(&x, &up).map_err(|e| e.to_string())?;
        let rho_down = spearman(&x, &down).map_err(|e| e.to_string())?;
        ensure(rho_up == 1.0 && rho_down == -1.0, || {
            format!("n={n}: {rho_up}, {rho_down}")
        })?;
    }
    let mut tie_cases = 0;
    for case in 0..500 {
        let n = rng.random_range(3..40);
        let x: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..5u8)))
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|_| f64::from(rng.random_range(0..4u8)))
            .collect();
        let want = spearman_oracle(&x, &y);
        if !want.is_finite() {
            continue;
        }
        let got = spearman(&x, &y).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-12, || {
            format!("case {case}: {got} vs {want}")
        })?;
        tie_cases += 1;
    }
    Ok(format!(
        "monotone +1 and reversed -1 exactly; {tie_cases} tied cases within 1e-12"
    ))
}

/// Three well-separated classes in 8 dimensions.
fn separable_examples(rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, String)> {
    let centers: Vec<Vec<f64>> = (0..3)
        .map(|c| (0..8).map(|j| if j % 3 == c { 4.0 } else { 0.0 }).collect())
        .collect();
    (0..400)
        .map(|i| {
            let c = i % 3;
            let x = centers[c]
                .iter()
                .map(|m| m + rng.random_range(-1.0..1.0))
                .collect();
            (x, format!("class{c}"))
        })
        .collect()
}

fn probe_sanity() -> Result<String, String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let raw = separable_examples(&mut rng);
    let options = DatasetOptions {
        test_fraction: 0.25,
        ..DatasetOptions::default()
    };
    let config = TrainConfig::default();
    ensure(config.epochs <= 200, || "epoch budget".into())?;
    let dataset = ProbeDataset::from_examples(ProbeLevel::Word, raw.clone(), &options)
        .map_err(|e| e.to_string())?;
    ensure(
        dataset.train.len() == 300 && dataset.test.len() == 100,
        || format!("split {}/{}", dataset.train.len(), dataset.test.len()),
    )?;
    let model = train_linear_probe(&dataset, &config).map_err(|e| e.to_string())?;
    let acc = evaluate_probe(&model, &dataset, Split::Test).map_err(|e| e.to_string())?;
    ensure(acc == 1.0, || format!("separable accuracy {acc}"))?;

    let mut shuffled_accs = Vec::new();
    for seed in 0..5u64 {
        let mut labels: Vec<String> = raw.iter().map(|(_, l)| l.clone()).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(100 + seed));
        let control: Vec<(Vec<f64>, String)> =
            raw.iter().map(|(x, _)| x.clone()).zip(labels).collect();
        let ds = ProbeDataset::from_examples(
            ProbeLevel::Word,
            control,
            &DatasetOptions { seed, ..options },
        )
        .map_err(|e| e.to_string())?;
        let m =
            train_linear_probe(&ds, &TrainConfig { seed, ..config }).map_err(|e| e.to_string())?;
        shuffled_accs.push(evaluate_probe(&m, &ds, Split::Test).map_err(|e| e.to_string())?);
    }
    let control = shuffled_accs.iter().sum::<f64>() / shuffled_accs.len() as f64;
    let chance = 1.0 / 3.0;
    ensure((control - chance).abs() <= 0.10, || {
        format!("shuffled control {control:.3} vs chance {chance:.3}")
    })?;
    let took = within(Duration::from_secs(30), started)?;
    Ok(format!(
        "test accuracy 100%, shuffled control {:.1}% (chance 33.3%), {took:.2?}",
        100.0 * control
    ))
}

fn rank(v: Verdict) -> usize {
    Verdict::ALL.iter().position(|x| *x == v).unwrap()
}

struct RandomWord {
    ctx: WordContext,
    space: MultilingualEmbeddingSpace,
}

fn random_word(rng: &mut ChaCha8Rng) -> RandomWord {
    const SYLLABLES: [&str; 8] = ["ma", "vi", "to", "ra", "ne", "su", "li", "ko"];
    let make = |rng: &mut ChaCha8Rng| -> String {
        (0..rng.random_range(1..=3))
            .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
            .collect()
    };
    let word = make(rng);
    let dim = 6;
    let mut space = MultilingualEmbeddingSpace::new(dim);
    let vector = |rng: &mut ChaCha8Rng| {
        (0..dim)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect::<Vec<_>>()
    };
    if rng.random_bool(0.7) {
        space.insert("fr", &word, vector(rng)).unwrap();
    }
    let tokens: Vec<TokenObservation> = (0..rng.random_range(0..=4))
        .map(|_| {
            let t = if rng.random_bool(0.15) {
                word.clone()
            } else {
                make(rng)
            };
            let lang = if rng.random_bool(0.5) { "en" } else { "fr" };
            TokenObservation::new(t, lang)
        })
        .collect();
    for t in &tokens {
        if rng.random_bool(0.8) && space.lookup(&t.language, &t.token).is_none() {
            space.insert(&t.language, &t.token, vector(rng)).unwrap();
        }
    }
    let aligned_en: Vec<String> = (0..rng.random_range(0..=2))
        .map(|_| {
            if rng.random_bool(0.2) && !tokens.is_empty() {
                tokens[rng.random_range(0..tokens.len())].token.clone()
            } else {
                make(rng)
            }
        })
        .collect();
    for w in &aligned_en {
        if rng.random_bool(0.5) && space.lookup("en", w).is_none() {
            space.insert("en", w, vector(rng)).unwrap();
        }
    }
    RandomWord {
        ctx: WordContext {
            word_index: 0,
            word,
            language: "fr".into(),
            tokens,
            aligned: vec![AlignedWords {
                language: "en".into(),
                words: aligned_en.clone(),
            }],
            english_pivots: aligned_en,
        },
        space,
    }
}

fn ladder_properties() -> Result<String, String> {
    let providers = Providers::uniform(Arc::new(TableG2p::builtin()) as Arc<dyn Backend>);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut seen: BTreeMap<Verdict, usize> = BTreeMap::new();
    for case in 0..1000 {
        let w = random_word(&mut rng);
        let classify = |config: &VerdictConfig| {
            classify_word(&w.ctx, config, &w.space, &providers)
                .map(|v| v.verdict)
                .map_err(|e| format!("case {case}: {e}"))
        };
        let (t1, t2) = {
            let a: f64 = rng.random_range(0.01..1.0);
            let b: f64 = rng.random_range(0.01..1.0);
            (a.min(b), a.max(b))
        };
        let (r1, r2) = {
            let a: f64 = rng.random_range(0.01..1.0);
            let b: f64 = rng.random_range(0.01..1.0);
            (a.min(b), a.max(b))
        };
        let base = VerdictConfig::default();
        let low_t = classify(&VerdictConfig {
            semantic_threshold: t1,
            ..base.clone()
        })?;
        let high_t = classify(&VerdictConfig {
            semantic_threshold: t2,
            ..base.clone()
        })?;
        ensure(rank(low_t) <= rank(high_t), || {
            format!("case {case}: threshold {t1:.3} gave {low_t}, {t2:.3} gave {high_t}")
        })?;
        let low_r = classify(&VerdictConfig {
            phone_match_ratio: r1,
            ..base.clone()
        })?;
        let high_r = classify(&VerdictConfig {
            phone_match_ratio: r2,
            ..base.clone()
        })?;
        ensure(rank(low_r) <= rank(high_r), || {
            format!("case {case}: ratio {r1:.3} gave {low_r}, {r2:.3} gave {high_r}")
        })?;

        let full = classify(&base)?;
        *seen.entry(full).or_default() += 1;
        let mut first_alone = Verdict::Unclear;
        for step in Step::ALL {
            let alone = classify(&base.clone().with_steps([step]))?;
            ensure(alone == step.verdict() || alone == Verdict::Unclear, || {
                format!("case {case}: step {step:?} alone gave {alone}")
            })?;
            if first_alone == Verdict::Unclear && alone != Verdict::Unclear {
                first_alone = alone;
            }
        }
        ensure(full == first_alone, || {
            format!("case {case}: full ladder {full}, first firing step {first_alone}")
        })?;
        for cut in 1..=Step::ALL.len() {
            let prefix = classify(&base.clone().with_steps(Step::ALL[..cut].iter().copied()))?;
            let expected = if rank(full) < cut {
                full
            } else {
                Verdict::Unclear
            };
            ensure(prefix == expected, || {
                format!("case {case}: first {cut} steps gave {prefix}, expected {expected}")
            })?;
        }
    }
    ensure(seen.len() == Verdict::ALL.len(), || {
        format!("instances only reached {seen:?}")
    })?;
    let spread: Vec<String> = seen.iter().map(|(v, n)| format!("{v} {n}")).collect();
    Ok(format!("1000 instances ({})", spread.join(", ")))
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn determinism() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = walkthrough(tmp.path());
    let mut runs = Vec::new();
    for name in ["run-a", "run-b"] {
        let out_dir = tmp.path().join(name);
        let out = malens(&[
            "-c",
            &fx.config_arg(),
            "--seed",
            "11",
            "--output-dir",
            &out_dir.display().to_string(),
            "verdicts",
        ]);
        ensure(out.status.success(), || stderr(&out))?;
        runs.push((files_under(&out_dir), stdout(&out)));
    }
    let (a, b) = (&runs[0], &runs[1]);
    ensure(!a.0.is_empty(), || "no output files".into())?;
    ensure(a.0 == b.0, || "output files differ".into())?;
    ensure(a.1 == b.1, || "standard output differs".into())?;
    Ok(format!("{} files identical across two runs", a.0.len()))
}

/// A word pattern whose nearest tokens force a known verdict.
struct Template {
    word: &'static str,
    tokens: &'static [&'static str],
    translation: &'static str,
    verdict: Verdict,
}

const TEMPLATES: [Template; 5] = [
    Template {
        word: "chat",
        tokens: &["chat"],
        translation: "cat",
        verdict: Verdict::Transcribed,
    },
    Template {
        word: "chien",
        tokens: &["dog"],
        translation: "dog",
        verdict: Verdict::Translated,
    },
    Template {
        word: "rouge",
        tokens: &["crimson"],
        translation: "red",
        verdict: Verdict::Semantic,
    },
    Template {
        word: "vivez",
        tokens: &["v", "Ave", "v"],
        translation: "live",
        verdict: Verdict::Transliterated,
    },
    Template {
        word: "lune",
        tokens: &["▁"],
        translation: "moon",
        verdict: Verdict::Unclear,
    },
];

const SYNTHETIC_VOCAB: [(&str, &str); 9] = [
    ("chat", "fr"),
    ("dog", "en"),
    ("crimson", "en"),
    ("v", "en"),
    ("Ave", "en"),
    ("▁", "und"),
    ("the", "en"),
    ("de", "fr"),
    ("cat", "en"),
];

fn synthetic_end_to_end() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let n = SYNTHETIC_VOCAB.len();
    let matrix = EmbeddingMatrix::new(
        n,
        (0..n).flat_map(|i| one_hot(n, i)).collect(),
        SYNTHETIC_VOCAB.iter().map(|(t, _)| t.to_string()).collect(),
    )
    .map_err(|e| e.to_string())?;
    let row = |token: &str| {
        SYNTHETIC_VOCAB
            .iter()
            .position(|(t, _)| *t == token)
            .unwrap()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut want_verdicts: BTreeMap<String, u64> = BTreeMap::new();
    let mut want_languages: BTreeMap<String, u64> = BTreeMap::new();
    let mut utterances = Vec::new();
    for u in 0..24 {
        let picks: Vec<&Template> = (0..rng.random_range(1..=7))
            .map(|_| &TEMPLATES[rng.random_range(0..TEMPLATES.len())])
            .collect();
        let frame_ms = 100;
        let (mut spans, mut frames, mut translation) = (Vec::new(), Vec::new(), Vec::new());
        let mut t = 0;
        for p in &picks {
            let start = t;
            for tok in p.tokens {
                let mut v = one_hot(n, row(tok));
                v.iter_mut()
                    .for_each(|x| *x += rng.random_range(-0.05f32..0.05));
                frames.extend(v);
                *want_languages
                    .entry(SYNTHETIC_VOCAB[row(tok)].1.to_owned())
                    .or_default() += 1;
                t += frame_ms;
            }
            spans.push((p.word, start, t));
            translation.push(p.translation);
            *want_verdicts
                .entry(p.verdict.as_str().to_owned())
                .or_default() += 1;
        }
        let mut rec = record(&format!("syn-{u:03}"), "fr", words(&spans), vec![]);
        let alignment: Vec<(usize, usize)> = (0..picks.len()).map(|i| (i, i)).collect();
        rec.translations
            .insert("en".into(), aligned(&translation.join(" "), &alignment));
        utterances.push(UtteranceSpec {
            record: rec,
            frame_ms: frame_ms as u32,
            dim: n,
            frames: BTreeMap::from([(Stage::AdapterOutput, frames)]),
        });
    }
    write_corpus(
        &dir.join("corpus"),
        "synthetic-fr",
        "fr",
        &matrix,
        &utterances,
    );
    let langid: Vec<_> = SYNTHETIC_VOCAB
        .iter()
        .filter(|(_, l)| *l != "und")
        .map(|(t, l)| {
            (
                malens_core::providers::ProviderRequest::lang_id(t),
                malens_core::providers::ProviderResponse::Language(l.to_string()),
            )
        })
        .collect();
    write_fixtures(&dir.join("providers.jsonl"), &langid);
    let d = 4;
    write_vec(
        &dir.join("fr.vec"),
        d,
        &[("rouge", blend(d, 0, 1, 0.9)), ("chien", one_hot(d, 2))],
    );
    write_vec(
        &dir.join("en.vec"),
        d,
        &[
            ("crimson", one_hot(d, 0)),
            ("red", one_hot(d, 0)),
            ("dog", one_hot(d, 3)),
        ],
    );
    std::fs::write(
        dir.join("malens.toml"),
        r#"corpus = "corpus/manifest.json"
output_dir = "out"

[providers]
langid = { backend = "fixture", path = "providers.jsonl" }

[space.files]
en = "en.vec"
fr = "fr.vec"
"#,
    )
    .map_err(|e| e.to_string())?;
    let out = malens(&[
        "-c",
        &dir.join("malens.toml").display().to_string(),
        "verdicts",
    ]);
    ensure(out.status.success(), || stderr(&out))?;

    let text = std::fs::read_to_string(dir.join("out/verdicts/reports.json"))
        .map_err(|e| e.to_string())?;
    let reports = parse_json(&text).map_err(|e| e.to_string())?;
    let find = |axis: Axis| -> Result<&DistributionReport, String> {
        reports
            .iter()
            .find(|r| r.axis == axis)
            .ok_or(format!("no {axis:?} report"))
    };
    let counts = |r: &DistributionReport| -> BTreeMap<String, u64> {
        r.buckets
            .iter()
            .map(|b| (b.label.clone(), b.count))
            .collect()
    };
    let raw = find(Axis::WordVerdictRaw)?;
    ensure(counts(raw) == want_verdicts, || {
        format!("verdicts {:?} vs {want_verdicts:?}", counts(raw))
    })?;
    let decipherable = find(Axis::WordVerdict)?;
    let mut want_decipherable = want_verdicts.clone();
    let unclear = want_decipherable.remove("Unclear").unwrap_or(0);
    ensure(
        counts(decipherable) == want_decipherable && decipherable.excluded == unclear,
        || {
            format!(
                "decipherable {:?} excluded {}",
                counts(decipherable),
                decipherable.excluded
            )
        },
    )?;
    let languages = find(Axis::TokenLanguage)?;
    ensure(
        counts(languages) == want_languages && languages.excluded == 0,
        || format!("languages {:?} vs {want_languages:?}", counts(languages)),
    )?;
    let words: u64 = want_verdicts.values().sum();
    let frames: u64 = want_languages.values().sum();
    Ok(format!(
        "{words} words and {frames} frames recovered exactly"
    ))
}
