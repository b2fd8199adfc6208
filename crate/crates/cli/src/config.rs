//! TOML run configuration.
//!
//! Relative paths are resolved against the config file's directory.
//! Credentials never live here: remote keys come from `MALENS_<CAP>_KEY`
//! and may override URLs via `MALENS_<CAP>_URL`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::Deserialize;

use malens_core::analysis::AlignOptions;
use malens_core::asr::WerOptions;
use malens_core::probes::{DatasetOptions, ProbeLevel, TrainConfig};
use malens_core::providers::{
    Backend, CacheStore, CachedBackend, CommandBackend, FixtureBackend, InflightLimit,
    ProviderError, ProviderRequest, ProviderResponse, Providers, TableG2p, FIXTURE_NAMESPACE,
};
use malens_core::verdict::{MultilingualEmbeddingSpace, VerdictConfig, DEFAULT_HIGH_CUTOFF};
use malens_core::Stage;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Corpus manifest.
    pub corpus: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_stage")]
    pub stage: Stage,
    #[serde(default)]
    pub providers: ProvidersConfig,
    #[serde(default)]
    pub space: SpaceConfig,
    #[serde(default)]
    pub verdict: VerdictConfig,
    #[serde(default)]
    pub align: AlignOptions,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub sts: StsConfig,
    #[serde(default)]
    pub wer: WerConfig,
    #[serde(default)]
    pub calibrate: CalibrateConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("malens-out")
}

fn default_stage() -> Stage {
    Stage::AdapterOutput
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersConfig {
    /// Response cache for remote and command backends.
    pub cache_dir: Option<PathBuf>,
    /// Key cache entries so the cache directory doubles as a fixture store.
    #[serde(default)]
    pub record_fixtures: bool,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    pub langid: Option<BackendConfig>,
    pub translate: Option<BackendConfig>,
    pub align: Option<BackendConfig>,
    pub g2p: Option<BackendConfig>,
}

fn default_inflight() -> usize {
    8
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            cache_dir: None,
            record_fixtures: false,
            max_inflight: default_inflight(),
            langid: None,
            translate: None,
            align: None,
            g2p: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Frozen responses: a store directory or a JSON-lines file.
    Fixture {
        path: PathBuf,
    },
    Remote {
        url: Option<String>,
    },
    Command {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    /// Built-in grapheme tables, optionally extended from a directory.
    Table {
        tables_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    /// Language code to `.vec` file.
    #[serde(default)]
    pub files: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "all_levels")]
    pub levels: Vec<ProbeLevel>,
    #[serde(default = "all_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub dataset: DatasetOptions,
    #[serde(default)]
    pub train: TrainConfig,
}

fn all_levels() -> Vec<ProbeLevel> {
    vec![ProbeLevel::Phone, ProbeLevel::Word]
}

fn all_stages() -> Vec<Stage> {
    vec![Stage::EncoderOutput, Stage::AdapterOutput]
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            levels: all_levels(),
            stages: all_stages(),
            dataset: DatasetOptions::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StsConfig {
    /// JSON list of `{a, b, score}` entries.
    pub pairs: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WerConfig {
    #[serde(default)]
    pub hypotheses: Vec<PathBuf>,
    /// Also report the share of hypotheses in the corpus language.
    #[serde(default)]
    pub lang_match: bool,
    #[serde(default)]
    pub options: WerOptions,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub simlex: Option<PathBuf>,
    #[serde(default = "default_cutoff")]
    pub high_cutoff: f64,
}

fn default_cutoff() -> f64 {
    DEFAULT_HIGH_CUTOFF
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            simlex: None,
            high_cutoff: DEFAULT_HIGH_CUTOFF,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.corpus.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
        if let Some(p) = self.providers.cache_dir.as_mut() {
            fix(p);
        }
        for backend in [
            &mut self.providers.langid,
            &mut self.providers.translate,
            &mut self.providers.align,
            &mut self.providers.g2p,
        ]
        .into_iter()
        .flatten()
        {
            match backend {
                BackendConfig::Fixture { path } => fix(path),
                BackendConfig::Table {
                    tables_dir: Some(dir),
                } => fix(dir),
                _ => {}
            }
        }
        self.space.files.values_mut().for_each(fix);
        if let Some(p) = self.sts.pairs.as_mut() {
            fix(p);
        }
        self.wer.hypotheses.iter_mut().for_each(fix);
        if let Some(p) = self.calibrate.simlex.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.verdict.validate()?;
        if self.providers.max_inflight == 0 {
            bail!("providers.max_inflight must be positive");
        }
        if self.probe.levels.is_empty() || self.probe.stages.is_empty() {
            bail!("probe.levels and probe.stages must not be empty");
        }
        Ok(())
    }

    pub fn corpus_path(&self) -> anyhow::Result<&Path> {
        self.corpus
            .as_deref()
            .context("config has no `corpus` manifest path")
    }

    pub fn load_space(&self) -> anyhow::Result<MultilingualEmbeddingSpace> {
        let mut space = MultilingualEmbeddingSpace::default();
        for (lang, path) in &self.space.files {
            let n = space.load_vec(lang, path)?;
            log::info!("loaded {n} {lang} vectors from {}", path.display());
        }
        Ok(space)
    }
}

/// Stands in for a capability nobody configured.
struct Unconfigured(&'static str);

impl Backend for Unconfigured {
    fn name(&self) -> &str {
        self.0
    }

    fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        Err(ProviderError::Unavailable(format!(
            "no {} provider configured for {request}",
            self.0
        )))
    }
}

#[cfg(feature = "remote")]
fn env_var(capability: &str, what: &str) -> Option<String> {
    std::env::var(format!("MALENS_{}_{what}", capability.to_ascii_uppercase()))
        .ok()
        .filter(|v| !v.is_empty())
}

impl ProvidersConfig {
    /// Builds the provider router. Remote and command backends go through
    /// the cache when `cache_dir` is set.
    pub fn build(&self) -> anyhow::Result<Providers> {
        let store = match &self.cache_dir {
            Some(dir) => {
                Some(Arc::new(CacheStore::open(dir).with_context(|| {
                    format!("opening cache {}", dir.display())
                })?))
            }
            None => None,
        };
        let limit = InflightLimit::new(self.max_inflight);
        let build = |capability: &'static str,
                     config: &Option<BackendConfig>|
         -> anyhow::Result<Arc<dyn Backend>> {
            let live: Arc<dyn Backend> =
                match config {
                    None if capability == "g2p" => return Ok(Arc::new(TableG2p::builtin())),
                    None => return Ok(Arc::new(Unconfigured(capability))),
                    Some(BackendConfig::Fixture { path }) => {
                        let fixture = FixtureBackend::open(path).with_context(|| {
                            format!("opening {capability} fixtures {}", path.display())
                        })?;
                        return Ok(Arc::new(fixture));
                    }
                    Some(BackendConfig::Table { tables_dir }) => {
                        let mut g2p = TableG2p::builtin();
                        if let Some(dir) = tables_dir {
                            g2p.load_dir(dir).with_context(|| {
                                format!("loading G2P tables from {}", dir.display())
                            })?;
                        }
                        return Ok(Arc::new(g2p));
                    }
                    Some(BackendConfig::Remote { url }) => {
                        remote(capability, url.clone(), limit.clone())?
                    }
                    Some(BackendConfig::Command { program, args }) => Arc::new(
                        CommandBackend::new(capability, program.clone(), args.clone()),
                    ),
                };
            Ok(match &store {
                Some(store) if self.record_fixtures => Arc::new(CachedBackend::with_namespace(
                    live,
                    store.clone(),
                    FIXTURE_NAMESPACE,
                )),
                Some(store) => Arc::new(CachedBackend::new(live, store.clone())),
                None => live,
            })
        };
        Ok(Providers::new(
            build("langid", &self.langid)?,
            build("translate", &self.translate)?,
            build("align", &self.align)?,
            build("g2p", &self.g2p)?,
        ))
    }
}

#[cfg(feature = "remote")]
fn remote(
    capability: &'static str,
    url: Option<String>,
    limit: InflightLimit,
) -> anyhow::Result<Arc<dyn Backend>> {
    let url = env_var(capability, "URL").or(url).with_context(|| {
        format!(
            "no URL for remote {capability} (set it in the config or MALENS_{}_URL)",
            capability.to_ascii_uppercase()
        )
    })?;
    let key = env_var(capability, "KEY");
    Ok(Arc::new(malens_core::providers::RemoteBackend::new(
        capability, url, key, limit,
    )))
}

#[cfg(not(feature = "remote"))]
fn remote(
    capability: &'static str,
    _url: Option<String>,
    _limit: InflightLimit,
) -> anyhow::Result<Arc<dyn Backend>> {
    bail!("remote {capability} backend needs the `remote` feature")
}
