use std::path::Path;

use super::{space, MultilingualEmbeddingSpace, VerdictError};

/// Human score at or above which a pair counts as "highly similar".
pub const DEFAULT_HIGH_CUTOFF: f64 = 7.0;

const MIN_PAIRS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SimlexPair {
    pub word1: String,
    pub word2: String,
    /// Human similarity on a 0-10 scale.
    pub score: f64,
}

/// Reads a SimLex-style tab-separated file. With a header, the `word1`,
/// `word2` and `SimLex999` columns are used; without one, the first three.
pub fn load_simlex(path: &Path) -> Result<Vec<SimlexPair>, VerdictError> {
    let bad = |msg: String| VerdictError::InvalidSpace(format!("{}: {msg}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    let mut cols = (0, 1, 2);
    if let Some((_, first)) = lines.peek() {
        let header: Vec<&str> = first.split('\t').map(str::trim).collect();
        if header.len() >= 3 && header[2].parse::<f64>().is_err() {
            let find = |name: &str| header.iter().position(|h| h.eq_ignore_ascii_case(name));
            cols = (
                find("word1").unwrap_or(0),
                find("word2").unwrap_or(1),
                find("SimLex999").or_else(|| find("score")).unwrap_or(2),
            );
            lines.next();
        }
    }
    let mut pairs = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let get = |i: usize| {
            fields
                .get(i)
                .copied()
                .ok_or_else(|| bad(format!("line {}: missing column {i}", n + 1)))
        };
        let score = get(cols.2)?
            .parse::<f64>()
            .map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
        pairs.push(SimlexPair {
            word1: get(cols.0)?.to_owned(),
            word2: get(cols.1)?.to_owned(),
            score,
        });
    }
    Ok(pairs)
}

/// Picks the cosine threshold that best separates highly similar pairs
/// (`score >= high_cutoff`) from the rest, by F1 of `cosine >= t`.
///
/// Candidates are the observed cosines. Equal F1 keeps the higher threshold.
/// Pairs with a word missing from the English space are ignored.
pub fn calibrate_threshold(
    pairs: &[SimlexPair],
    space: &MultilingualEmbeddingSpace,
    high_cutoff: f64,
) -> Result<f64, VerdictError> {
    let mut scored: Vec<(f64, bool)> = pairs
        .iter()
        .filter_map(|p| {
            let a = space.lookup("en", &p.word1)?;
            let b = space.lookup("en", &p.word2)?;
            Some((space::cosine(a, b)?, p.score >= high_cutoff))
        })
        .collect();
    let positives = scored.iter().filter(|(_, high)| *high).count();
    if scored.len() < MIN_PAIRS || positives == 0 || positives == scored.len() {
        return Err(VerdictError::InsufficientPairs {
            needed: MIN_PAIRS,
            found: scored.len(),
        });
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best = (f64::NEG_INFINITY, scored[0].0);
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        while i < scored.len() && scored[i].0 == t {
            predicted += 1;
            tp += usize::from(scored[i].1);
            i += 1;
        }
        let f1 = 2.0 * tp as f64 / (predicted + positives) as f64;
        if f1 > best.0 {
            best = (f1, t);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(angle: f64) -> Vec<f32> {
        vec![angle.cos() as f32, angle.sin() as f32]
    }

    /// Pairs whose cosine equals score / 10.
    fn correlated(n: usize) -> (Vec<SimlexPair>, MultilingualEmbeddingSpace) {
        let mut space = MultilingualEmbeddingSpace::new(2);
        let mut pairs = Vec::new();
        for i in 0..n {
            let score = 10.0 * i as f64 / (n - 1) as f64;
            let (a, b) = (format!("a{i}"), format!("b{i}"));
            space.insert("en", &a, unit(0.0)).unwrap();
            space.insert("en", &b, unit((score / 10.0).acos())).unwrap();
            pairs.push(SimlexPair {
                word1: a,
                word2: b,
                score,
            });
        }
        (pairs, space)
    }

    #[test]
    fn perfectly_correlated_pairs_give_the_cutoff() {
        let (pairs, space) = correlated(101);
        let t = calibrate_threshold(&pairs, &space, 7.0).unwrap();
        assert!((t - 0.7).abs() < 1e-6, "{t}");
    }

    #[test]
    fn degenerate_positive_class() {
        let (pairs, space) = correlated(101);
        let mut low: Vec<_> = pairs.iter().filter(|p| p.score < 7.0).cloned().collect();
        while low.len() < 120 {
            low.push(low[0].clone());
        }
        assert!(matches!(
            calibrate_threshold(&low, &space, 7.0),
            Err(VerdictError::InsufficientPairs { .. })
        ));
    }

    #[test]
    fn too_few_resolvable_pairs() {
        let (mut pairs, space) = correlated(101);
        pairs[0].word1 = "missing".into();
        assert!(calibrate_threshold(&pairs, &space, 7.0).is_ok());
        pairs[1].word2 = "missing".into();
        assert_eq!(
            calibrate_threshold(&pairs, &space, 7.0),
            Err(VerdictError::InsufficientPairs {
                needed: 100,
                found: 99
            })
        );
    }

    #[test]
    fn simlex_file_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("simlex.txt");
        std::fs::write(&path, "word1\tword2\tPOS\tSimLex999\tconc(w1)\nold\tnew\tA\t1.58\t2.72\nsmart\tintelligent\tA\t9.2\t1.75\n").unwrap();
        let pairs = load_simlex(&path).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].word2, "intelligent");
        assert_eq!(pairs[1].score, 9.2);
    }

    #[test]
    fn simlex_file_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.tsv");
        std::fs::write(&path, "a\tb\t3.5\n").unwrap();
        assert_eq!(load_simlex(&path).unwrap()[0].score, 3.5);
    }
}
