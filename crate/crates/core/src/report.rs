//! Distribution reports over token languages and word verdicts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neighbor::FrameAssignment;
use crate::verdict::Verdict;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no assigned frames to count")]
    NoAssignments,
    #[error("frame {0} has no identified language")]
    UnresolvedLanguage(usize),
    #[error("no words to count")]
    NoWords,
    #[error("every word is Unclear")]
    NoDecipherableWords,
    #[error("cannot merge {0} reports with {1} reports")]
    AxisMismatch(Axis, Axis),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    TokenLanguage,
    /// Verdicts of decipherable words only.
    WordVerdict,
    /// All verdicts, Unclear included.
    WordVerdictRaw,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::TokenLanguage => "token_language",
            Axis::WordVerdict => "word_verdict",
            Axis::WordVerdictRaw => "word_verdict_raw",
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    pub count: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub corpus_id: String,
    pub axis: Axis,
    /// Sorted by count descending, then label.
    pub buckets: Vec<Bucket>,
    /// Items left out of the fractions: no-neighbor frames, or Unclear words
    /// on the decipherable axis.
    pub excluded: u64,
    /// Decipherable words over all words; verdict axes only.
    pub decipherable_fraction: Option<f64>,
}

impl DistributionReport {
    fn from_counts(
        corpus_id: &str,
        axis: Axis,
        counts: BTreeMap<String, u64>,
        excluded: u64,
    ) -> Self {
        let total: u64 = counts.values().sum();
        let mut buckets: Vec<Bucket> = counts
            .into_iter()
            .filter(|(_, c)| *c > 0)
            .map(|(label, count)| Bucket {
                label,
                count,
                fraction: count as f64 / total as f64,
            })
            .collect();
        buckets.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
        let decipherable_fraction = match axis {
            Axis::TokenLanguage => None,
            Axis::WordVerdict if total + excluded > 0 => {
                Some(total as f64 / (total + excluded) as f64)
            }
            Axis::WordVerdictRaw if total > 0 => {
                let unclear = buckets
                    .iter()
                    .find(|b| b.label == Verdict::Unclear.as_str())
                    .map_or(0, |b| b.count);
                Some((total - unclear) as f64 / total as f64)
            }
            _ => None,
        };
        Self {
            corpus_id: corpus_id.to_owned(),
            axis,
            buckets,
            excluded,
            decipherable_fraction,
        }
    }

    /// A report with no buckets.
    pub fn empty(corpus_id: &str, axis: Axis) -> Self {
        Self::from_counts(corpus_id, axis, BTreeMap::new(), 0)
    }

    pub fn total(&self) -> u64 {
        self.buckets.iter().map(|b| b.count).sum()
    }

    pub fn count(&self, label: &str) -> u64 {
        self.buckets
            .iter()
            .find(|b| b.label == label)
            .map_or(0, |b| b.count)
    }

    pub fn fraction(&self, label: &str) -> f64 {
        self.buckets
            .iter()
            .find(|b| b.label == label)
            .map_or(0.0, |b| b.fraction)
    }

    fn counts(&self) -> BTreeMap<String, u64> {
        self.buckets
            .iter()
            .map(|b| (b.label.clone(), b.count))
            .collect()
    }
}

/// Frames per identified token language. No-neighbor frames are counted in
/// [`DistributionReport::excluded`].
pub fn token_language_distribution<'a>(
    corpus_id: &str,
    assignments: impl IntoIterator<Item = &'a FrameAssignment>,
) -> Result<DistributionReport, ReportError> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut excluded = 0;
    for a in assignments {
        match a.assigned() {
            Some(n) => {
                let lang = n
                    .language
                    .as_ref()
                    .ok_or(ReportError::UnresolvedLanguage(n.frame_index))?;
                *counts.entry(lang.clone()).or_default() += 1;
            }
            None => excluded += 1,
        }
    }
    if counts.is_empty() {
        return Err(ReportError::NoAssignments);
    }
    Ok(DistributionReport::from_counts(
        corpus_id,
        Axis::TokenLanguage,
        counts,
        excluded,
    ))
}

fn verdict_counts(verdicts: impl IntoIterator<Item = Verdict>) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for v in verdicts {
        *counts.entry(v.as_str().to_owned()).or_default() += 1;
    }
    counts
}

/// Verdict fractions over decipherable words.
pub fn verdict_distribution(
    corpus_id: &str,
    verdicts: impl IntoIterator<Item = Verdict>,
) -> Result<DistributionReport, ReportError> {
    let mut counts = verdict_counts(verdicts);
    if counts.is_empty() {
        return Err(ReportError::NoWords);
    }
    let unclear = counts.remove(Verdict::Unclear.as_str()).unwrap_or(0);
    if counts.is_empty() {
        return Err(ReportError::NoDecipherableWords);
    }
    Ok(DistributionReport::from_counts(
        corpus_id,
        Axis::WordVerdict,
        counts,
        unclear,
    ))
}

/// Verdict fractions over all words.
pub fn raw_verdict_distribution(
    corpus_id: &str,
    verdicts: impl IntoIterator<Item = Verdict>,
) -> Result<DistributionReport, ReportError> {
    let counts = verdict_counts(verdicts);
    if counts.is_empty() {
        return Err(ReportError::NoWords);
    }
    Ok(DistributionReport::from_counts(
        corpus_id,
        Axis::WordVerdictRaw,
        counts,
        0,
    ))
}

/// Sums the counts of same-axis reports under a new corpus id.
pub fn merge(
    corpus_id: &str,
    reports: &[DistributionReport],
) -> Result<Option<DistributionReport>, ReportError> {
    let Some(first) = reports.first() else {
        return Ok(None);
    };
    let mut counts = BTreeMap::new();
    let mut excluded = 0;
    for r in reports {
        if r.axis != first.axis {
            return Err(ReportError::AxisMismatch(first.axis, r.axis));
        }
        for (label, c) in r.counts() {
            *counts.entry(label).or_default() += c;
        }
        excluded += r.excluded;
    }
    Ok(Some(DistributionReport::from_counts(
        corpus_id, first.axis, counts, excluded,
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Table,
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(Format::Table),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?} (table, csv, json)")),
        }
    }
}

/// Renders reports; identical input gives identical bytes.
pub fn render(reports: &[DistributionReport], format: Format) -> Result<String, ReportError> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(reports)? + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["corpus_id", "axis", "label", "count", "fraction"])?;
            for r in reports {
                for b in &r.buckets {
                    w.write_record([
                        r.corpus_id.as_str(),
                        r.axis.as_str(),
                        &b.label,
                        &b.count.to_string(),
                        &b.fraction.to_string(),
                    ])?;
                }
            }
            let bytes = w
                .into_inner()
                .map_err(|e| csv::Error::from(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        Format::Table => {
            let width = reports
                .iter()
                .flat_map(|r| r.buckets.iter().map(|b| b.label.chars().count()))
                .max()
                .unwrap_or(0)
                .max("label".len());
            let mut out = String::new();
            let _ = writeln!(
                out,
                "{:<16} {:<16} {:<width$} {:>8} {:>9}",
                "corpus_id", "axis", "label", "count", "fraction"
            );
            for r in reports {
                for b in &r.buckets {
                    let pad = width - b.label.chars().count() + b.label.len();
                    let _ = writeln!(
                        out,
                        "{:<16} {:<16} {:<pad$} {:>8} {:>8.2}%",
                        r.corpus_id,
                        r.axis.as_str(),
                        b.label,
                        b.count,
                        100.0 * b.fraction
                    );
                }
                if let Some(d) = r.decipherable_fraction {
                    let _ = writeln!(
                        out,
                        "# {} {}: decipherable {:.2}%",
                        r.corpus_id,
                        r.axis,
                        100.0 * d
                    );
                }
            }
            Ok(out)
        }
    }
}

/// Writes [`render`]ed reports to `path`.
pub fn emit(
    reports: &[DistributionReport],
    format: Format,
    path: &Path,
) -> Result<(), ReportError> {
    let text = render(reports, format)?;
    std::fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads reports written with [`Format::Json`].
pub fn parse_json(text: &str) -> Result<Vec<DistributionReport>, ReportError> {
    Ok(serde_json::from_str(text)?)
}
