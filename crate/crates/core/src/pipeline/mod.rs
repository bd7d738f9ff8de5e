//! Resumable, stage-by-stage runs over a run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json                     stage statuses, digests, timestamps
//! config.json                       effective configuration
//! corpus.jsonl, split.json          normalized dataset and its split
//! taxonomy/elicitation.jsonl        raw elicitation responses
//! taxonomy/taxonomy.jsonl           parsed taxonomy entries
//! generation/<s>/jobs.jsonl         planned prompts
//! generation/<s>/completions.jsonl  raw provider responses
//! generation/<s>/errors.jsonl       failed requests
//! synthetic/<s>.jsonl               cleaned synthetic corpus (+ .stats.json)
//! discriminator/dataset.jsonl       real vs first-decode training data
//! discriminator/model.json          trained discriminator
//! filtered/<s>.jsonl                corpus kept by the filter
//! filtered/<s>.scores.jsonl         per-sample proba_real and keep flag
//! models/<row>.json                 downstream classifiers
//! evaluation/rows.jsonl             per-row metrics
//! report/report.jsonl, report.txt   final report
//! ```

mod config;
mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    derive_seed, DatasetConfig, DiscriminatorSettings, EvaluationSettings, GenerationSettings, Overrides,
    RunConfig, SplitSettings,
};
pub use manifest::{ProviderIdentity, RunLock, RunManifest, StageRecord, StageStatus, MANIFEST_FILE};

use crate::classifier::{self, ClassifierError, ClassifierModel, TrainConfig};
use crate::cleaning::{assemble_synthetic_corpus, job_index, AssemblyStats, CleaningError};
use crate::corpus::{
    load_corpus, read_corpus, relabel, split_corpus_with, write_corpus, CorpusError, CorpusSplit, LabeledText,
    SplitConfig,
};
use crate::evaluation::{
    baseline_all_negative, baseline_zero_shot, score_model, EvalError, EvaluationReport, ReportRow, RowKind,
};
use crate::filtering::{
    believability, build_discriminator_dataset, filter_synthetic, train_discriminator, Discriminator, FilterError,
};
use crate::generation::{run_prompts, Completer, GenerationError, GenerationFailure, ProviderKind, RawCompletion};
use crate::io;
use crate::prompting::{
    index_jobs, parse_taxonomy, plan_generation_jobs, render_prompt, render_taxonomy_elicitation, GenerationJob,
    PlanConfig, PolarityMode, PromptError, Strategy, Taxonomy, TaxonomyRecord,
};

const CONFIG_FILE: &str = "config.json";
const TAXONOMY_ATTEMPTS: usize = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config {path}: {reason}")]
    Config { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("run directory is locked ({0}); remove the lock file if no other process is using it")]
    Locked(PathBuf),
    #[error("config digest {found} does not match the run's config digest {expected} ({run_dir}); use a new run directory")]
    ConfigMismatch {
        run_dir: String,
        expected: String,
        found: String,
    },
    #[error("{0} has no configuration; pass --config")]
    MissingConfig(String),
    #[error("stage `{stage}` needs `{upstream}`; run `{upstream}` first")]
    MissingUpstream { stage: String, upstream: String },
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
    #[error("stage `{0}` is not part of this run's configuration")]
    NotConfigured(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Cleaning(#[from] CleaningError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Split,
    Taxonomy,
    Generate(Strategy),
    Clean(Strategy),
    Discriminator,
    Filter,
    Train,
    Evaluate,
    Report,
}

impl Stage {
    pub fn name(self) -> String {
        match self {
            Stage::Split => "split".into(),
            Stage::Taxonomy => "taxonomy".into(),
            Stage::Generate(s) => format!("generate:{}", s.cli_name()),
            Stage::Clean(s) => format!("clean:{}", s.cli_name()),
            Stage::Discriminator => "discriminator".into(),
            Stage::Filter => "filter".into(),
            Stage::Train => "train".into(),
            Stage::Evaluate => "evaluate".into(),
            Stage::Report => "report".into(),
        }
    }

    pub fn parse(name: &str) -> Result<Self, PipelineError> {
        let unknown = || PipelineError::UnknownStage(name.to_string());
        let strategy = |s: &str| s.parse::<Strategy>().map_err(|_| unknown());
        Ok(match name.split_once(':') {
            Some(("generate", s)) => Stage::Generate(strategy(s)?),
            Some(("clean", s)) => Stage::Clean(strategy(s)?),
            Some(_) => return Err(unknown()),
            None => match name {
                "split" => Stage::Split,
                "taxonomy" => Stage::Taxonomy,
                "discriminator" => Stage::Discriminator,
                "filter" => Stage::Filter,
                "train" => Stage::Train,
                "evaluate" => Stage::Evaluate,
                "report" => Stage::Report,
                _ => return Err(unknown()),
            },
        })
    }

    pub fn upstream(self, config: &RunConfig) -> Vec<Stage> {
        match self {
            Stage::Split | Stage::Taxonomy => vec![],
            Stage::Generate(Strategy::Taxonomy) => vec![Stage::Split, Stage::Taxonomy],
            Stage::Generate(_) => vec![Stage::Split],
            Stage::Clean(s) => vec![Stage::Generate(s)],
            Stage::Discriminator => vec![Stage::Split, Stage::Clean(config.discriminator.strategy)],
            Stage::Filter => vec![Stage::Discriminator],
            Stage::Train => {
                let mut up = vec![Stage::Split];
                up.extend(config.generation.strategies.iter().map(|&s| Stage::Clean(s)));
                if config.discriminator.enabled {
                    up.push(Stage::Filter);
                }
                up
            }
            Stage::Evaluate => {
                let mut up = vec![Stage::Train];
                if config.discriminator.enabled {
                    up.push(Stage::Discriminator);
                }
                up
            }
            Stage::Report => vec![Stage::Evaluate],
        }
    }
}

/// Every stage of a full run, in execution order.
pub fn all_stages(config: &RunConfig) -> Vec<Stage> {
    let strategies = &config.generation.strategies;
    let mut stages = vec![Stage::Split];
    if strategies.contains(&Strategy::Taxonomy) {
        stages.push(Stage::Taxonomy);
    }
    stages.extend(strategies.iter().map(|&s| Stage::Generate(s)));
    stages.extend(strategies.iter().map(|&s| Stage::Clean(s)));
    if config.discriminator.enabled {
        stages.push(Stage::Discriminator);
        stages.push(Stage::Filter);
    }
    stages.extend([Stage::Train, Stage::Evaluate, Stage::Report]);
    stages
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

/// Which model a trained report row uses, and on what data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedRow {
    pub kind: RowKind,
    pub model: Option<String>,
    pub n_train: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub strategy: Strategy,
    pub prompts: usize,
    pub completions: usize,
    pub failures: usize,
    pub resumed: usize,
}

pub struct Pipeline {
    run_dir: PathBuf,
    config: RunConfig,
    digest: String,
    run_id: String,
    manifest: RunManifest,
    completer: Option<Completer>,
    _lock: RunLock,
}

impl Pipeline {
    /// Opens (or creates) a run. Without a config, the run's stored config
    /// is used; with one, it must match the stored digest.
    pub fn open(run_dir: &Path, config: Option<RunConfig>) -> Result<Self, PipelineError> {
        let lock = RunLock::acquire(run_dir)?;
        let stored_path = run_dir.join(CONFIG_FILE);
        let config = match config {
            Some(c) => c,
            None if stored_path.exists() => io::read_json(&stored_path).map_err(io_err(&stored_path))?,
            None => return Err(PipelineError::MissingConfig(run_dir.display().to_string())),
        };
        config.validate()?;
        let digest = config.digest()?;
        let run_id = config.run_id(&digest);
        let manifest = match RunManifest::load(run_dir)? {
            Some(m) if m.config_digest != digest => {
                return Err(PipelineError::ConfigMismatch {
                    run_dir: run_dir.display().to_string(),
                    expected: m.config_digest,
                    found: digest,
                })
            }
            Some(m) => m,
            None => {
                io::write_json(&stored_path, &config).map_err(io_err(&stored_path))?;
                let provider = ProviderIdentity {
                    kind: match config.provider.kind {
                        ProviderKind::Mock => "mock".into(),
                        ProviderKind::RemoteChatApi => "remote".into(),
                    },
                    model_name: match config.provider.kind {
                        ProviderKind::Mock => "mock".into(),
                        ProviderKind::RemoteChatApi => config.provider.model_name.clone(),
                    },
                };
                let mut m = RunManifest::new(run_id.clone(), digest.clone(), config.seed, provider);
                m.save(run_dir)?;
                m
            }
        };
        Ok(Self {
            run_dir: run_dir.to_path_buf(),
            config,
            digest,
            run_id,
            manifest,
            completer: None,
            _lock: lock,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    /// Replaces the provider (tests and embedding callers).
    pub fn with_completer(mut self, completer: Completer) -> Self {
        self.completer = Some(completer);
        self
    }

    fn completer(&mut self) -> Result<&Completer, PipelineError> {
        if self.completer.is_none() {
            let c = Completer::from_config(&self.config.provider, self.config.generation.params, self.config.seed)?;
            self.completer = Some(c);
        }
        Ok(self.completer.as_ref().expect("just built"))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    fn configured(&self, stage: Stage) -> bool {
        all_stages(&self.config).contains(&stage)
    }

    /// Runs every configured stage that is not already done.
    pub fn run_all(&mut self) -> Result<EvaluationReport, PipelineError> {
        for stage in all_stages(&self.config) {
            self.run_stage(stage, false)?;
        }
        self.load_report()
    }

    /// Runs one stage. A stage that is already done (with its artifacts on
    /// disk) is skipped unless `force` is set; forcing invalidates
    /// everything downstream.
    pub fn run_stage(&mut self, stage: Stage, force: bool) -> Result<StageOutcome, PipelineError> {
        let name = stage.name();
        if !self.configured(stage) {
            return Err(PipelineError::NotConfigured(name));
        }
        for up in stage.upstream(&self.config) {
            if !self.manifest.is_done(&up.name(), &self.run_dir) {
                return Err(PipelineError::MissingUpstream {
                    stage: name,
                    upstream: up.name(),
                });
            }
        }
        if !force && self.manifest.is_done(&name, &self.run_dir) {
            tracing::info!(stage = %name, "already done; skipping");
            return Ok(StageOutcome::Skipped);
        }
        let downstream: Vec<String> = self.downstream(stage).iter().map(|s| s.name()).collect();
        self.manifest.invalidate(&downstream);
        self.manifest.mark_started(&name);
        self.manifest.save(&self.run_dir)?;
        tracing::info!(stage = %name, "running");

        let result = match stage {
            Stage::Split => self.stage_split(),
            Stage::Taxonomy => self.stage_taxonomy(),
            Stage::Generate(s) => self.stage_generate(s),
            Stage::Clean(s) => self.stage_clean(s),
            Stage::Discriminator => self.stage_discriminator(),
            Stage::Filter => self.stage_filter(),
            Stage::Train => self.stage_train(),
            Stage::Evaluate => self.stage_evaluate(),
            Stage::Report => self.stage_report(),
        };
        match result {
            Ok(artifacts) => {
                self.manifest.mark_done(&name, artifacts);
                self.manifest.save(&self.run_dir)?;
                Ok(StageOutcome::Ran)
            }
            Err(e) => {
                self.manifest.mark_failed(&name, e.to_string());
                self.manifest.save(&self.run_dir)?;
                Err(e)
            }
        }
    }

    fn downstream(&self, stage: Stage) -> Vec<Stage> {
        let all = all_stages(&self.config);
        let mut hit: BTreeSet<Stage> = BTreeSet::from([stage]);
        let mut out = Vec::new();
        for s in all {
            if s != stage && s.upstream(&self.config).iter().any(|u| hit.contains(u)) {
                hit.insert(s);
                out.push(s);
            }
        }
        out
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<String, PipelineError> {
        let path = self.path(rel);
        io::write_json(&path, value).map_err(io_err(&path))?;
        Ok(rel.to_string())
    }

    fn write_jsonl<T: Serialize>(&self, rel: &str, records: &[T]) -> Result<String, PipelineError> {
        let path = self.path(rel);
        io::write_jsonl(&path, records).map_err(io_err(&path))?;
        Ok(rel.to_string())
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<T, PipelineError> {
        let path = self.path(rel);
        io::read_json(&path).map_err(io_err(&path))
    }

    fn read_jsonl<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<Vec<T>, PipelineError> {
        let path = self.path(rel);
        io::read_jsonl(&path).map_err(io_err(&path))
    }

    fn write_corpus(&self, rel: &str, records: &[LabeledText]) -> Result<String, PipelineError> {
        write_corpus(&self.path(rel), records)?;
        Ok(rel.to_string())
    }

    fn read_corpus(&self, rel: &str) -> Result<Vec<LabeledText>, PipelineError> {
        Ok(read_corpus(&self.path(rel))?)
    }

    pub fn load_split(&self) -> Result<CorpusSplit, PipelineError> {
        self.read_json("split.json")
    }

    pub fn load_synthetic(&self, strategy: Strategy) -> Result<Vec<LabeledText>, PipelineError> {
        self.read_corpus(&format!("synthetic/{}.jsonl", strategy.cli_name()))
    }

    pub fn load_discriminator(&self) -> Result<Discriminator, PipelineError> {
        self.read_json("discriminator/model.json")
    }

    pub fn load_report(&self) -> Result<EvaluationReport, PipelineError> {
        self.read_json("report/summary.json")
    }

    fn train_config(&self, base: &TrainConfig, purpose: &str) -> TrainConfig {
        let mut c = base.clone();
        c.seed = derive_seed(self.config.seed, &format!("{purpose}:{}", base.seed));
        c
    }

    fn stage_split(&mut self) -> Result<Vec<String>, PipelineError> {
        let corpus = load_corpus(&self.config.dataset.path, self.config.dataset_format()?)?;
        let split = split_corpus_with(
            &corpus,
            &SplitConfig {
                train_fraction: self.config.split.train_fraction,
                seed: derive_seed(self.config.seed, "split"),
                stratify: self.config.split.stratify,
            },
        )?;
        tracing::info!(train = split.train_texts.len(), test = split.test.len(), "split corpus");
        Ok(vec![
            self.write_corpus("corpus.jsonl", &corpus)?,
            self.write_json("split.json", &split)?,
        ])
    }

    fn stage_taxonomy(&mut self) -> Result<Vec<String>, PipelineError> {
        let construct = self.config.construct_name.clone();
        let k = self.config.generation.taxonomy_k;
        let base = render_taxonomy_elicitation(&construct, k)?;
        let mut responses = Vec::new();
        let mut last_err = None;
        for attempt in 0..TAXONOMY_ATTEMPTS {
            let prompt = base.clone().with_id(format!("taxonomy-elicitation-{attempt}"));
            let completion = self.completer()?.complete(&prompt)?;
            let parsed = parse_taxonomy(&completion.raw_text, k, &construct);
            responses.push(completion);
            match parsed {
                Ok(t) => {
                    let artifacts = vec![
                        self.write_jsonl("taxonomy/elicitation.jsonl", &responses)?,
                        self.write_jsonl("taxonomy/taxonomy.jsonl", &t.to_records())?,
                    ];
                    return Ok(artifacts);
                }
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "taxonomy response did not parse");
                    last_err = Some(e);
                }
            }
        }
        self.write_jsonl("taxonomy/elicitation.jsonl", &responses)?;
        Err(PipelineError::Stage {
            stage: "taxonomy".into(),
            message: format!(
                "no usable taxonomy after {TAXONOMY_ATTEMPTS} attempts: {}",
                last_err.expect("at least one attempt")
            ),
        })
    }

    pub fn load_taxonomy(&self) -> Result<Taxonomy, PipelineError> {
        let records: Vec<TaxonomyRecord> = self.read_jsonl("taxonomy/taxonomy.jsonl")?;
        Ok(Taxonomy::from_records(records)?)
    }

    /// Planned jobs for a strategy, in job order.
    pub fn plan(&self, strategy: Strategy) -> Result<Vec<GenerationJob>, PipelineError> {
        let split = self.load_split()?;
        let taxonomy = if strategy == Strategy::Taxonomy {
            Some(self.load_taxonomy()?)
        } else {
            None
        };
        let specs = plan_generation_jobs(
            &split,
            &PlanConfig {
                strategy,
                polarity_mode: PolarityMode::Both,
                n_generations: self.config.generation.n_generations,
                simple_repetitions: self.config.generation.simple_repetitions,
                construct_name: self.config.construct_name.clone(),
                taxonomy,
            },
        )?;
        Ok(index_jobs(specs))
    }

    fn stage_generate(&mut self, strategy: Strategy) -> Result<Vec<String>, PipelineError> {
        let dir = format!("generation/{}", strategy.cli_name());
        let jobs = self.plan(strategy)?;
        let jobs_rel = self.write_jsonl(&format!("{dir}/jobs.jsonl"), &jobs)?;
        let prompts = jobs
            .iter()
            .map(|j| Ok(render_prompt(&j.spec)?.with_id(j.prompt_id.clone())))
            .collect::<Result<Vec<_>, PromptError>>()?;

        // responses already archived by an interrupted attempt
        let partial_path = self.path(&format!("{dir}/completions.partial.jsonl"));
        let mut done: BTreeMap<String, RawCompletion> = read_partial(&partial_path)
            .into_iter()
            .map(|c| (c.prompt_id.clone(), c))
            .collect();
        let resumed = done.len();
        let pending: Vec<_> = prompts.iter().filter(|p| !done.contains_key(&p.id)).cloned().collect();
        if resumed > 0 {
            tracing::info!(resumed, pending = pending.len(), "resuming generation");
        }

        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&partial_path)
            .map_err(io_err(&partial_path))?;
        let sink = Mutex::new(file);
        let parallelism = self.config.provider.parallelism;
        let completer = self.completer()?;
        let outcome = run_prompts(&pending, completer, parallelism, |c| {
            let mut line = serde_json::to_vec(c).expect("completion serializes");
            line.push(b'\n');
            let mut f = sink.lock().unwrap();
            if let Err(e) = f.write_all(&line).and_then(|_| f.flush()) {
                tracing::error!(error = %e, "could not archive completion");
            }
        });
        drop(sink);

        let errors_rel = self.write_jsonl(&format!("{dir}/errors.jsonl"), &outcome.failures)?;
        if outcome.aborted {
            let first = outcome
                .failures
                .iter()
                .find(|f| f.fatal_for_run)
                .map_or_else(String::new, |f| f.error.clone());
            return Err(PipelineError::Stage {
                stage: Stage::Generate(strategy).name(),
                message: format!("aborted: {first}; completed responses are kept for resume"),
            });
        }
        for c in outcome.completions {
            done.insert(c.prompt_id.clone(), c);
        }
        let ordered: Vec<&RawCompletion> = prompts.iter().filter_map(|p| done.get(&p.id)).collect();
        let completions_rel = self.write_jsonl(&format!("{dir}/completions.jsonl"), &ordered)?;
        let _ = std::fs::remove_file(&partial_path);

        let summary = GenerationSummary {
            strategy,
            prompts: prompts.len(),
            completions: ordered.len(),
            failures: outcome.failures.len(),
            resumed,
        };
        tracing::info!(?summary, "generation finished");
        let summary_rel = self.write_json(&format!("{dir}/summary.json"), &summary)?;
        Ok(vec![jobs_rel, completions_rel, errors_rel, summary_rel])
    }

    pub fn load_generation_failures(&self, strategy: Strategy) -> Result<Vec<GenerationFailure>, PipelineError> {
        self.read_jsonl(&format!("generation/{}/errors.jsonl", strategy.cli_name()))
    }

    fn stage_clean(&mut self, strategy: Strategy) -> Result<Vec<String>, PipelineError> {
        let dir = format!("generation/{}", strategy.cli_name());
        let jobs: Vec<GenerationJob> = self.read_jsonl(&format!("{dir}/jobs.jsonl"))?;
        let completions: Vec<RawCompletion> = self.read_jsonl(&format!("{dir}/completions.jsonl"))?;
        let assembly = assemble_synthetic_corpus(&completions, &job_index(&jobs), &self.run_id)?;
        let stats: &AssemblyStats = &assembly.stats;
        tracing::info!(
            samples = assembly.samples.len(),
            refusals = stats.refusals,
            duplicates = stats.duplicates_removed,
            "cleaned {}",
            strategy.cli_name()
        );
        Ok(vec![
            self.write_corpus(&format!("synthetic/{}.jsonl", strategy.cli_name()), &assembly.samples)?,
            self.write_json(&format!("synthetic/{}.stats.json", strategy.cli_name()), stats)?,
        ])
    }

    fn stage_discriminator(&mut self) -> Result<Vec<String>, PipelineError> {
        let split = self.load_split()?;
        let synthetic = self.load_synthetic(self.config.discriminator.strategy)?;
        let dataset = build_discriminator_dataset(
            &split,
            &synthetic,
            derive_seed(self.config.seed, "discriminator-balance"),
            &self.run_id,
        )?;
        let config = self.train_config(&self.config.discriminator.train, "discriminator");
        let discriminator = train_discriminator(&dataset, &config)?;
        Ok(vec![
            self.write_jsonl("discriminator/dataset.jsonl", &dataset.items)?,
            self.write_json("discriminator/model.json", &discriminator)?,
        ])
    }

    fn stage_filter(&mut self) -> Result<Vec<String>, PipelineError> {
        let strategy = self.config.discriminator.strategy;
        let discriminator = self.load_discriminator()?;
        let synthetic = self.load_synthetic(strategy)?;
        let outcome = filter_synthetic(&synthetic, &discriminator, self.config.discriminator.cull_threshold)?;
        tracing::info!(kept = outcome.report.total.kept, culled = outcome.report.total.culled, "filtered");
        let s = strategy.cli_name();
        Ok(vec![
            self.write_corpus(&format!("filtered/{s}.jsonl"), &outcome.kept)?,
            self.write_jsonl(&format!("filtered/{s}.scores.jsonl"), &outcome.scores)?,
            self.write_json(&format!("filtered/{s}.report.json"), &outcome.report)?,
        ])
    }

    /// Training data for each trained report row.
    fn training_sets(&self) -> Result<Vec<(RowKind, Vec<LabeledText>)>, PipelineError> {
        let mut sets = Vec::new();
        for &s in &self.config.generation.strategies {
            sets.push((RowKind::for_strategy(s), self.load_synthetic(s)?));
        }
        if self.config.discriminator.enabled {
            let s = self.config.discriminator.strategy.cli_name();
            sets.push((RowKind::Filtering, self.read_corpus(&format!("filtered/{s}.jsonl"))?));
        }
        if self.config.evaluation.groundtruth {
            let split = self.load_split()?;
            let corpus = self.read_corpus("corpus.jsonl")?;
            sets.push((RowKind::Groundtruth, relabel(&split.train_texts, &corpus)));
        }
        Ok(sets)
    }

    fn stage_train(&mut self) -> Result<Vec<String>, PipelineError> {
        let mut artifacts = Vec::new();
        let mut rows = Vec::new();
        for (kind, data) in self.training_sets()? {
            let tag = serde_json::to_value(kind).expect("row kind serializes");
            let tag = tag.as_str().expect("unit variant");
            let config = self.train_config(&self.config.classifier, &format!("train:{tag}"));
            match classifier::train(&data, &self.config.construct_name, &config) {
                Ok(model) => {
                    let rel = format!("models/{tag}.json");
                    artifacts.push(self.write_json(&rel, &model)?);
                    rows.push(TrainedRow {
                        kind,
                        model: Some(rel),
                        n_train: data.len(),
                        error: None,
                    });
                }
                Err(e) => {
                    tracing::error!(row = tag, error = %e, "training failed");
                    rows.push(TrainedRow {
                        kind,
                        model: None,
                        n_train: data.len(),
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        artifacts.push(self.write_jsonl("models/index.jsonl", &rows)?);
        Ok(artifacts)
    }

    fn stage_evaluate(&mut self) -> Result<Vec<String>, PipelineError> {
        let split = self.load_split()?;
        let construct = self.config.construct_name.clone();
        let discriminator = if self.config.discriminator.enabled {
            Some(self.load_discriminator()?)
        } else {
            None
        };
        let threshold = self.config.discriminator.believability_threshold;
        let trained: Vec<TrainedRow> = self.read_jsonl("models/index.jsonl")?;
        let mut rows = Vec::new();
        for t in trained {
            let row = match (&t.model, &t.error) {
                (Some(rel), _) => self
                    .evaluate_trained(&t, rel, &split, discriminator.as_ref(), threshold)
                    .unwrap_or_else(|e| ReportRow::failed(t.kind, &construct, e)),
                (None, err) => ReportRow::failed(t.kind, &construct, err.clone().unwrap_or_default()),
            };
            rows.push(row);
        }
        if self.config.evaluation.all_negative {
            rows.push(
                baseline_all_negative(&split.test, &construct)
                    .unwrap_or_else(|e| ReportRow::failed(RowKind::AllNegative, &construct, e)),
            );
        }
        if self.config.evaluation.zero_shot {
            let parallelism = self.config.provider.parallelism;
            let row = match self.completer() {
                Ok(c) => baseline_zero_shot(&split.test, c, &construct, parallelism)
                    .unwrap_or_else(|e| ReportRow::failed(RowKind::ZeroShot, &construct, e)),
                Err(e) => ReportRow::failed(RowKind::ZeroShot, &construct, e),
            };
            rows.push(row);
        }
        rows.sort_by_key(|r| r.kind);
        Ok(vec![self.write_jsonl("evaluation/rows.jsonl", &rows)?])
    }

    fn evaluate_trained(
        &self,
        trained: &TrainedRow,
        model_rel: &str,
        split: &CorpusSplit,
        discriminator: Option<&Discriminator>,
        threshold: f64,
    ) -> Result<ReportRow, PipelineError> {
        let model = ClassifierModel::load(&self.path(model_rel))?;
        let (acc, f1) = score_model(&model, &split.test)?;
        let name = trained.kind.display_name(&self.config.construct_name);
        let believability = match discriminator {
            Some(d) => {
                let data = match trained.kind {
                    RowKind::Groundtruth => split.test.clone(),
                    RowKind::Filtering => {
                        let s = self.config.discriminator.strategy.cli_name();
                        self.read_corpus(&format!("filtered/{s}.jsonl"))?
                    }
                    kind => {
                        let strategy = Strategy::ALL
                            .into_iter()
                            .find(|&s| RowKind::for_strategy(s) == kind)
                            .expect("strategy row");
                        self.load_synthetic(strategy)?
                    }
                };
                Some(believability(&name, &data, d, threshold)?.fraction_predicted_real)
            }
            None => None,
        };
        Ok(ReportRow {
            kind: trained.kind,
            name,
            accuracy: Some(acc),
            macro_f1: Some(f1),
            believability,
            n_train: trained.n_train,
            n_test: split.test.len(),
            excluded: 0,
            circularity_warning: trained.kind == RowKind::Filtering && believability.is_some(),
            model_digest: Some(model.weights_digest()),
            error: None,
        })
    }

    fn stage_report(&mut self) -> Result<Vec<String>, PipelineError> {
        let rows: Vec<ReportRow> = self.read_jsonl("evaluation/rows.jsonl")?;
        let report = EvaluationReport::new(&self.run_id, &self.digest, &self.config.construct_name, rows);
        let table_path = self.path("report/report.txt");
        io::atomic_write(&table_path, report.render_table().as_bytes()).map_err(io_err(&table_path))?;
        Ok(vec![
            self.write_jsonl("report/report.jsonl", &report.rows)?,
            self.write_json("report/summary.json", &report)?,
            "report/report.txt".to_string(),
        ])
    }
}

/// The effective config saved in an existing run directory.
pub fn stored_config(run_dir: &Path) -> Result<Option<RunConfig>, PipelineError> {
    let path = run_dir.join(CONFIG_FILE);
    if !path.exists() {
        return Ok(None);
    }
    io::read_json(&path).map(Some).map_err(io_err(&path))
}

/// Reads an append-only archive, ignoring a torn final line.
fn read_partial(path: &Path) -> Vec<RawCompletion> {
    let Ok(file) = std::fs::File::open(path) else {
        return Vec::new();
    };
    BufReader::new(file)
        .lines()
        .map_while(Result::ok)
        .filter_map(|l| serde_json::from_str(&l).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in [
            Stage::Split,
            Stage::Taxonomy,
            Stage::Generate(Strategy::GroundingRewrite),
            Stage::Clean(Strategy::Simple),
            Stage::Discriminator,
            Stage::Filter,
            Stage::Train,
            Stage::Evaluate,
            Stage::Report,
        ] {
            assert_eq!(Stage::parse(&s.name()).unwrap(), s);
        }
        assert!(Stage::parse("generate:bogus").is_err());
    }

    #[test]
    fn upstream_order_is_consistent() {
        let config = RunConfig::from_toml_str("[dataset]\npath = \"d.csv\"\n", Path::new(".")).unwrap();
        let stages = all_stages(&config);
        for (i, s) in stages.iter().enumerate() {
            for up in s.upstream(&config) {
                let j = stages.iter().position(|x| *x == up).unwrap();
                assert!(j < i, "{} before {}", up.name(), s.name());
            }
        }
    }
}
