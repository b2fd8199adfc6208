use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;

use malens_core::analysis::{self, ErrorClass, UtteranceAssignments, VerdictRun};
use malens_core::asr::{self, AsrError, AsrRow, HypothesisSet};
use malens_core::interchange::{load_corpus, read_json, Corpus};
use malens_core::probes::{self, ProbeError, ProbeLevel, Split};
use malens_core::report::{self, DistributionReport, Format};
use malens_core::verdict::{self, Verdict};
use malens_core::Stage;

use crate::config::RunConfig;
use crate::error::{Classify, Failure, Outcome};
use crate::{Cli, Command, GlobalArgs};

pub fn dispatch(cli: Cli) -> Outcome {
    let Cli { global, command } = cli;
    if let Some(jobs) = global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring worker threads")
            .internal()?;
    }
    let mut config = RunConfig::load(&global.config).input()?;
    if let Some(dir) = &global.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    let ctx = Ctx { config, global };
    match command {
        Command::Neighbors => ctx.neighbors(),
        Command::Verdicts { steps } => ctx.verdicts(steps),
        Command::Probe => ctx.probe(),
        Command::Sts { pairs } => ctx.sts(pairs),
        Command::Wer { hypotheses } => ctx.wer(hypotheses),
        Command::Report {
            format,
            merge_as,
            out,
            runs,
        } => ctx.report(format, merge_as, out, runs),
        Command::Calibrate {
            simlex,
            high_cutoff,
        } => ctx.calibrate(simlex, high_cutoff),
    }
}

struct Ctx {
    config: RunConfig,
    global: GlobalArgs,
}

/// Files a command is about to write, checked before any work starts.
struct Plan {
    files: Vec<PathBuf>,
}

impl Plan {
    fn new(files: impl IntoIterator<Item = PathBuf>) -> Self {
        Self {
            files: files.into_iter().collect(),
        }
    }

    fn guard(&self, force: bool) -> Outcome {
        if force {
            return Ok(());
        }
        if let Some(existing) = self.files.iter().find(|p| p.exists()) {
            return Err(anyhow!(
                "refusing to overwrite {} (pass --force)",
                existing.display()
            ))
            .input();
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .internal()?;
    }
    std::fs::write(path, bytes)
        .with_context(|| format!("writing {}", path.display()))
        .internal()
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Outcome {
    let mut text = serde_json::to_string_pretty(value)
        .context("serializing")
        .internal()?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn stage_dir(stage: Stage) -> &'static str {
    match stage {
        Stage::EncoderOutput => "encoder_output",
        Stage::AdapterOutput => "adapter_output",
    }
}

#[derive(Serialize)]
struct NeighborLog {
    stage: Stage,
    utterances: usize,
    frames: usize,
    no_neighbor_frames: usize,
    languages_identified: bool,
    seconds: f64,
}

impl Ctx {
    fn corpus(&self) -> Outcome<Corpus> {
        let path = self.config.corpus_path().input()?;
        load_corpus(path).map_err(Failure::from_input)
    }

    /// Loads every utterance once so bad records surface before any provider call.
    fn check_corpus(&self, corpus: &Corpus, stages: &[Stage]) -> Outcome {
        for u in corpus.iter() {
            let u = u.map_err(Failure::from_input)?;
            for &stage in stages {
                if u.sequence(stage).is_none() {
                    return Err(anyhow!(
                        "utterance {} has no {stage} sequence",
                        u.record.utterance_id
                    ))
                    .input();
                }
            }
        }
        Ok(())
    }

    fn out(&self, parts: &[&str]) -> PathBuf {
        parts
            .iter()
            .fold(self.config.output_dir.clone(), |p, part| p.join(part))
    }

    fn neighbor_path(&self, stage: Stage, utterance_id: &str) -> PathBuf {
        self.out(&[
            "neighbors",
            stage_dir(stage),
            &format!("{utterance_id}.json"),
        ])
    }

    fn neighbors(&self) -> Outcome {
        let corpus = self.corpus()?;
        let stage = self.config.stage;
        self.check_corpus(&corpus, &[stage])?;
        corpus.embedding_matrix().map_err(Failure::from_input)?;
        if self.global.dry_run {
            println!(
                "dry run: {} utterances ready for {stage} neighbors",
                corpus.len()
            );
            return Ok(());
        }
        let ids = corpus.utterance_ids().map_err(Failure::from_input)?;
        let mut files: Vec<PathBuf> = ids.iter().map(|id| self.neighbor_path(stage, id)).collect();
        let log_path = self.out(&["neighbors", stage_dir(stage), "run.json"]);
        files.push(log_path.clone());
        Plan::new(files).guard(self.global.force)?;

        let started = Instant::now();
        let mut assignments = analysis::compute_neighbors(&corpus, stage)?;
        let label = self.config.providers.langid.is_some();
        if label {
            let providers = self.config.providers.build().input()?;
            analysis::label_languages(&mut assignments, &providers)?;
        }
        for a in &assignments {
            write_json(&self.neighbor_path(stage, &a.utterance_id), a)?;
        }
        let log = NeighborLog {
            stage,
            utterances: assignments.len(),
            frames: assignments.iter().map(|a| a.assignments.len()).sum(),
            no_neighbor_frames: assignments
                .iter()
                .map(UtteranceAssignments::no_neighbor_count)
                .sum(),
            languages_identified: label,
            seconds: started.elapsed().as_secs_f64(),
        };
        write_json(&log_path, &log)?;
        println!(
            "{} utterances, {} frames, {} without a neighbour ({:.2}s)",
            log.utterances, log.frames, log.no_neighbor_frames, log.seconds
        );
        Ok(())
    }

    /// Saved assignments when all are present, otherwise fresh ones.
    fn assignments(&self, corpus: &Corpus) -> Outcome<Vec<UtteranceAssignments>> {
        let stage = self.config.stage;
        let paths: Vec<PathBuf> = corpus
            .utterance_ids()
            .map_err(Failure::from_input)?
            .iter()
            .map(|id| self.neighbor_path(stage, id))
            .collect();
        if paths.iter().all(|p| p.is_file()) {
            log::info!("reusing saved {stage} assignments");
            return paths
                .iter()
                .map(|p| read_json(p).map_err(Failure::from_input))
                .collect();
        }
        Ok(analysis::compute_neighbors(corpus, stage)?)
    }

    fn verdicts(&self, steps: Option<Vec<verdict::Step>>) -> Outcome {
        let mut verdict_config = self.config.verdict.clone();
        if let Some(steps) = steps {
            verdict_config = verdict_config.with_steps(steps);
        }
        verdict_config.validate().input()?;
        let corpus = self.corpus()?;
        self.check_corpus(&corpus, &[self.config.stage])?;
        let space = self.config.load_space().input()?;
        if self.global.dry_run {
            println!(
                "dry run: {} utterances, space covers {:?}",
                corpus.len(),
                space.covered_languages()
            );
            return Ok(());
        }
        let dir = ["verdicts"];
        let verdicts_path = self.out(&[dir[0], "verdicts.json"]);
        let report_paths = [
            (Format::Json, self.out(&[dir[0], "reports.json"])),
            (Format::Csv, self.out(&[dir[0], "reports.csv"])),
            (Format::Table, self.out(&[dir[0], "reports.txt"])),
        ];
        Plan::new(
            std::iter::once(verdicts_path.clone())
                .chain(report_paths.iter().map(|(_, p)| p.clone())),
        )
        .guard(self.global.force)?;

        let providers = self.config.providers.build().input()?;
        let mut assignments = self.assignments(&corpus)?;
        let unlabelled = assignments
            .iter()
            .flat_map(|u| u.assignments.iter().filter_map(|a| a.assigned()))
            .any(|a| a.language.is_none());
        if unlabelled {
            analysis::label_languages(&mut assignments, &providers)?;
        }
        let run = analysis::run_verdicts(
            &corpus,
            &assignments,
            &providers,
            &space,
            &verdict_config,
            &self.config.align,
        )?;
        let mut reports = vec![
            analysis::token_language_report(&run.corpus_id, &assignments)
                .map_err(Failure::from_input)?,
        ];
        reports.extend(run.reports().map_err(Failure::from_input)?);

        write_json(&verdicts_path, &run)?;
        for (format, path) in &report_paths {
            let text = report::render(&reports, *format).internal()?;
            write_file(path, text.as_bytes())?;
        }
        print_summary(&run);
        Ok(())
    }

    fn probe(&self) -> Outcome {
        let corpus = self.corpus()?;
        let probe = &self.config.probe;
        self.check_corpus(&corpus, &probe.stages)?;
        if self.global.dry_run {
            println!("dry run: {} utterances ready for probing", corpus.len());
            return Ok(());
        }
        let json_path = self.out(&["probe", "results.json"]);
        let table_path = self.out(&["probe", "results.txt"]);
        Plan::new([json_path.clone(), table_path.clone()]).guard(self.global.force)?;

        let dataset_options = probes::DatasetOptions {
            seed: self.config.seed,
            ..probe.dataset
        };
        let train_config = probes::TrainConfig {
            seed: self.config.seed,
            ..probe.train
        };
        let mut rows = Vec::new();
        for &stage in &probe.stages {
            for &level in &probe.levels {
                let dataset =
                    match probes::build_probe_dataset(&corpus, stage, level, &dataset_options) {
                        Ok(d) => d,
                        Err(ProbeError::NoAlignments(level)) => {
                            log::warn!(
                                "skipping {level:?} probe: corpus has no {level:?} alignments"
                            );
                            continue;
                        }
                        Err(e) => return Err(e).input(),
                    };
                let model = probes::train_linear_probe(&dataset, &train_config).input()?;
                let accuracy = probes::evaluate_probe(&model, &dataset, Split::Test).input()?;
                rows.push(ProbeRow {
                    stage,
                    level,
                    labels: dataset.labels.len(),
                    train: dataset.train.len(),
                    test: dataset.test.len(),
                    accuracy,
                    final_loss: model.final_loss(),
                });
            }
        }
        if rows.is_empty() {
            return Err(anyhow!(
                "no probe could be trained: the corpus has no alignments at the requested levels"
            ))
            .input();
        }
        let mut table = format!(
            "{:<14} {:<6} {:>7} {:>7} {:>6} {:>9}\n",
            "stage", "level", "labels", "train", "test", "accuracy"
        );
        for r in &rows {
            table += &format!(
                "{:<14} {:<6} {:>7} {:>7} {:>6} {:>8.1}%\n",
                stage_dir(r.stage),
                format!("{:?}", r.level).to_lowercase(),
                r.labels,
                r.train,
                r.test,
                100.0 * r.accuracy
            );
        }
        write_json(&json_path, &rows)?;
        write_file(&table_path, table.as_bytes())?;
        print!("{table}");
        Ok(())
    }

    fn sts(&self, pairs: Option<PathBuf>) -> Outcome {
        let path = pairs
            .or_else(|| self.config.sts.pairs.clone())
            .context("no STS pair list (set sts.pairs or pass --pairs)")
            .input()?;
        let pairs = probes::load_sts_pairs(&path).input()?;
        if self.global.dry_run {
            println!("dry run: {} STS pairs loaded", pairs.len());
            return Ok(());
        }
        let out = self.out(&["sts", "result.json"]);
        Plan::new([out.clone()]).guard(self.global.force)?;
        let result = probes::sts_eval(&pairs).input()?;
        write_json(&out, &result)?;
        println!(
            "spearman rho {:.4} over {} pairs",
            result.rho, result.num_pairs
        );
        Ok(())
    }

    fn wer(&self, hypotheses: Vec<PathBuf>) -> Outcome {
        let files = if hypotheses.is_empty() {
            self.config.wer.hypotheses.clone()
        } else {
            hypotheses
        };
        if files.is_empty() {
            return Err(anyhow!(
                "no hypothesis files (set wer.hypotheses or pass --hyp)"
            ))
            .input();
        }
        let corpus = self.corpus()?;
        let mut references = BTreeMap::new();
        for u in corpus.iter() {
            let u = u.map_err(Failure::from_input)?;
            references.insert(
                u.record.utterance_id.clone(),
                u.record.words().collect::<Vec<_>>().join(" "),
            );
        }
        let sets: Vec<HypothesisSet> = files
            .iter()
            .map(|f| HypothesisSet::load(f).with_context(|| format!("loading {}", f.display())))
            .collect::<anyhow::Result<_>>()
            .input()?;
        for (set, file) in sets.iter().zip(&files) {
            if set.language != corpus.language() {
                return Err(anyhow!(
                    "{}: hypotheses are {} but the corpus is {}",
                    file.display(),
                    set.language,
                    corpus.language()
                ))
                .input();
            }
        }
        if self.global.dry_run {
            println!(
                "dry run: {} hypothesis sets against {} references",
                sets.len(),
                references.len()
            );
            return Ok(());
        }
        let json_path = self.out(&["wer", "results.json"]);
        let table_path = self.out(&["wer", "results.txt"]);
        Plan::new([json_path.clone(), table_path.clone()]).guard(self.global.force)?;

        let providers = if self.config.wer.lang_match {
            Some(self.config.providers.build().input()?)
        } else {
            None
        };
        let rows: Vec<AsrRow> = sets
            .iter()
            .map(|set| {
                asr::score_corpus(
                    &corpus.manifest().corpus_id,
                    &references,
                    set,
                    &self.config.wer.options,
                    providers.as_ref(),
                )
                .map_err(|e| match e {
                    AsrError::Provider(_) => Failure::new(ErrorClass::Provider, e),
                    other => Failure::new(ErrorClass::Input, other),
                })
            })
            .collect::<Outcome<_>>()?;
        let mut table = format!(
            "{:<20} {:<24} {:<5} {:>6} {:>9} {:>7}\n",
            "corpus", "model", "lang", "utts", "wer", "%lang"
        );
        for r in &rows {
            let lang = r
                .lang_percent
                .map_or_else(|| "-".to_owned(), |p| format!("{p:.1}"));
            table += &format!(
                "{:<20} {:<24} {:<5} {:>6} {:>8.1}% {:>7}\n",
                r.corpus_id, r.model_id, r.language, r.utterances, r.wer_percent, lang
            );
        }
        write_json(&json_path, &rows)?;
        write_file(&table_path, table.as_bytes())?;
        print!("{table}");
        Ok(())
    }

    fn report(
        &self,
        format: Format,
        merge_as: Option<String>,
        out: Option<PathBuf>,
        runs: Vec<PathBuf>,
    ) -> Outcome {
        let runs = if runs.is_empty() {
            vec![self.config.output_dir.clone()]
        } else {
            runs
        };
        let mut reports: Vec<DistributionReport> = Vec::new();
        for run in &runs {
            let path = run.join("verdicts").join("reports.json");
            let text = std::fs::read_to_string(&path)
                .with_context(|| {
                    format!("reading {} (run `malens verdicts` first)", path.display())
                })
                .input()?;
            reports.extend(
                report::parse_json(&text)
                    .with_context(|| path.display().to_string())
                    .input()?,
            );
        }
        if let Some(id) = merge_as {
            let mut by_axis: BTreeMap<report::Axis, Vec<DistributionReport>> = BTreeMap::new();
            for r in &reports {
                by_axis.entry(r.axis).or_default().push(r.clone());
            }
            for group in by_axis.values() {
                if let Some(merged) = report::merge(&id, group).internal()? {
                    reports.push(merged);
                }
            }
        }
        if self.global.dry_run {
            println!("dry run: {} reports loaded", reports.len());
            return Ok(());
        }
        let text = report::render(&reports, format).internal()?;
        match out {
            Some(path) => {
                Plan::new([path.clone()]).guard(self.global.force)?;
                write_file(&path, text.as_bytes())
            }
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }

    fn calibrate(&self, simlex: Option<PathBuf>, high_cutoff: Option<f64>) -> Outcome {
        let path = simlex
            .or_else(|| self.config.calibrate.simlex.clone())
            .context("no SimLex file (set calibrate.simlex or pass --simlex)")
            .input()?;
        let cutoff = high_cutoff.unwrap_or(self.config.calibrate.high_cutoff);
        let pairs = verdict::load_simlex(&path).input()?;
        let space = self.config.load_space().input()?;
        if !space.covers("en") {
            return Err(anyhow!(
                "calibration needs English vectors (space.files.en)"
            ))
            .input();
        }
        if self.global.dry_run {
            println!("dry run: {} rated pairs", pairs.len());
            return Ok(());
        }
        let out = self.out(&["calibrate", "threshold.json"]);
        Plan::new([out.clone()]).guard(self.global.force)?;
        let threshold = verdict::calibrate_threshold(&pairs, &space, cutoff).input()?;
        write_json(
            &out,
            &serde_json::json!({ "threshold": threshold, "high_cutoff": cutoff, "pairs": pairs.len() }),
        )?;
        println!("semantic threshold {threshold:.4} (cutoff {cutoff})");
        Ok(())
    }
}

#[derive(Serialize)]
struct ProbeRow {
    stage: Stage,
    level: ProbeLevel,
    labels: usize,
    train: usize,
    test: usize,
    accuracy: f64,
    final_loss: Option<f64>,
}

fn print_summary(run: &VerdictRun) {
    println!(
        "corpus {} ({}), top token languages: {}",
        run.corpus_id,
        run.language,
        run.top_languages.join(", ")
    );
    let total = run.verdicts.len();
    for v in Verdict::ALL {
        let n = run.verdicts.iter().filter(|r| r.verdict == v).count();
        if n > 0 {
            println!(
                "  {:<15} {:>6}  {:>6.1}%",
                v.as_str(),
                n,
                100.0 * n as f64 / total as f64
            );
        }
    }
    let decipherable = run
        .verdicts
        .iter()
        .filter(|r| r.verdict.is_decipherable())
        .count();
    println!("  decipherable    {decipherable:>6} of {total}");
}

impl Failure {
    fn from_input(e: impl Into<anyhow::Error>) -> Self {
        Failure::new(ErrorClass::Input, e)
    }
}
