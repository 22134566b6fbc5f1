//! The dynamic few-shot loop.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::prompt::{build_prompt, PromptExemplar};
use super::repository::{LoopState, Repository, RepositoryStore, Stage, ValidatedCotRecord};
use super::teacher::{complete_with_retry, DecodingMode, DecodingParams, RetryPolicy, TeacherClient, TeacherRequest};
use crate::corpus::TrainInstance;
use crate::execval::{validate_cot_in, ExecError, Session, VerdictDetail};
use crate::jsonl::JsonlError;
use crate::parallel::map_with_state;
use crate::rationale::parse_cot;
use crate::registry::DatabaseRegistry;
use crate::sqllex::{rank_examples, KeywordVocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub few_shot_n: usize,
    pub max_iterations: u32,
    pub greedy_temperature: f64,
    pub sampling_temperature: f64,
    pub sampling_seed: u64,
    pub stop_on_plateau: bool,
    pub workers: usize,
    pub model: String,
    pub retry: RetryPolicy,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            few_shot_n: 3,
            max_iterations: 16,
            greedy_temperature: 0.0,
            sampling_temperature: 0.7,
            sampling_seed: 0,
            stop_on_plateau: true,
            workers: 4,
            model: "teacher".into(),
            retry: RetryPolicy::default(),
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), BootstrapError> {
        if self.few_shot_n == 0 {
            return Err(BootstrapError::Config("few_shot_n must be at least 1".into()));
        }
        if !(self.greedy_temperature >= 0.0 && self.sampling_temperature >= 0.0) {
            return Err(BootstrapError::Config("temperatures must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BootstrapError {
    #[error("invalid bootstrap config: {0}")]
    Config(String),
    #[error("seeds directory {path} cannot be read: {source}")]
    SeedsDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("seed for `{0}` does not match any corpus instance")]
    UnknownSeedInstance(String),
    #[error("no valid seed rationales ({rejected} rejected)")]
    AllSeedsInvalid { rejected: usize },
    #[error("seed record for `{0}` is not positive")]
    NegativeSeed(String),
    #[error("repository: {0}")]
    Persistence(#[from] JsonlError),
}

/// Odd iterations decode greedily, even ones sample.
pub fn select_decoding(iteration: u32, config: &BootstrapConfig) -> DecodingParams {
    if iteration % 2 == 1 {
        DecodingParams {
            mode: DecodingMode::Greedy,
            temperature: config.greedy_temperature,
            seed: None,
        }
    } else {
        DecodingParams {
            mode: DecodingMode::Sampling,
            temperature: config.sampling_temperature,
            seed: Some(config.sampling_seed.wrapping_add(u64::from(iteration))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Prompt,
    Teacher,
    Parse,
    Execution,
    ResultMismatch,
    FinalSqlError,
    FinalSqlTimeout,
}

impl From<VerdictDetail> for FailureKind {
    fn from(d: VerdictDetail) -> Self {
        match d {
            VerdictDetail::ResultMismatch | VerdictDetail::Match => FailureKind::ResultMismatch,
            VerdictDetail::FinalSqlError => FailureKind::FinalSqlError,
            VerdictDetail::FinalSqlTimeout => FailureKind::FinalSqlTimeout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub instance_id: String,
    pub kind: FailureKind,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct IterationReport {
    pub iteration: u32,
    pub decoding: DecodingParams,
    pub attempted: usize,
    /// One positive record per newly covered instance.
    pub new_records: Vec<ValidatedCotRecord>,
    pub negative_records: Vec<ValidatedCotRecord>,
    pub failures: Vec<InstanceFailure>,
}

impl IterationReport {
    pub fn summary(&self, covered_after: usize, total: usize) -> IterationSummary {
        IterationSummary {
            iteration: self.iteration,
            decoding: self.decoding.mode,
            temperature: self.decoding.temperature,
            attempted: self.attempted,
            new_positive: self.new_records.len(),
            negative: self.negative_records.len(),
            failed: self.failures.len(),
            covered_after,
            total,
        }
    }
}

/// Per-iteration counts for logs and the iterations file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: u32,
    pub decoding: DecodingMode,
    pub temperature: f64,
    pub attempted: usize,
    pub new_positive: usize,
    pub negative: usize,
    pub failed: usize,
    pub covered_after: usize,
    pub total: usize,
}

#[derive(Debug)]
pub struct BootstrapOutcome {
    pub repository: Repository,
    pub reports: Vec<IterationReport>,
    pub state: LoopState,
}

/// A seed rationale as read from `<seeds_dir>/<instance_id>.md`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedCot {
    pub instance_id: String,
    pub markdown: String,
}

/// Reads every `*.md` file of `dir`, sorted by file name.
pub fn load_seeds(dir: &Path) -> Result<Vec<SeedCot>, BootstrapError> {
    let err = |source| BootstrapError::SeedsDir {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "md"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let markdown = std::fs::read_to_string(&p).map_err(err)?;
            let instance_id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(SeedCot { instance_id, markdown })
        })
        .collect()
}

pub(crate) enum Attempt {
    Positive(ValidatedCotRecord),
    Negative(ValidatedCotRecord),
    Failed(InstanceFailure),
}

/// Everything needed to call a model and validate its output.
pub(crate) struct Generator<'a> {
    pub registry: &'a DatabaseRegistry,
    pub vocab: &'a KeywordVocabulary,
    pub client: &'a dyn TeacherClient,
    pub model: &'a str,
    pub retry: RetryPolicy,
}

pub(crate) type SessionCache = HashMap<String, Session>;

pub(crate) fn failure_for(instance: &TrainInstance, kind: FailureKind, message: impl ToString) -> Attempt {
    Attempt::Failed(InstanceFailure {
        instance_id: instance.instance_id.clone(),
        kind,
        message: message.to_string(),
    })
}

impl Generator<'_> {
    pub(crate) fn attempt(
        &self,
        sessions: &mut SessionCache,
        instance: &TrainInstance,
        prompt: String,
        decoding: DecodingParams,
        stage: Stage,
        iteration: u32,
    ) -> Attempt {
        let request = TeacherRequest {
            model: self.model.to_string(),
            prompt,
            decoding,
            instance_id: Some(instance.instance_id.clone()),
        };
        let response = match complete_with_retry(self.client, &request, self.retry) {
            Ok(r) => r,
            Err(e) => return failure_for(instance, FailureKind::Teacher, e),
        };
        let cot = match parse_cot(&response.text) {
            Ok(c) => c,
            Err(e) => return failure_for(instance, FailureKind::Parse, e),
        };
        let session = match open_cached(sessions, self.registry, &instance.db_id) {
            Ok(s) => s,
            Err(e) => return failure_for(instance, FailureKind::Execution, e),
        };
        let verdict = match validate_cot_in(session, instance, &cot, self.registry) {
            Ok(v) => v,
            Err(e) => return failure_for(instance, FailureKind::Execution, e),
        };
        let record = match ValidatedCotRecord::new(&instance.instance_id, &cot, verdict, stage, iteration, decoding.mode, self.vocab) {
            Ok(r) => r,
            Err(e) => return failure_for(instance, FailureKind::Parse, e),
        };
        if record.is_positive() {
            Attempt::Positive(record)
        } else {
            Attempt::Negative(record)
        }
    }
}

pub(crate) fn open_cached<'s>(sessions: &'s mut SessionCache, registry: &DatabaseRegistry, db_id: &str) -> Result<&'s Session, ExecError> {
    if !sessions.contains_key(db_id) {
        sessions.insert(db_id.to_string(), Session::open(registry, db_id)?);
    }
    Ok(&sessions[db_id])
}

pub struct Bootstrapper<'a> {
    corpus: &'a [TrainInstance],
    by_id: HashMap<&'a str, &'a TrainInstance>,
    registry: &'a DatabaseRegistry,
    vocab: &'a KeywordVocabulary,
    teacher: &'a dyn TeacherClient,
    config: BootstrapConfig,
}

impl<'a> Bootstrapper<'a> {
    pub fn new(
        corpus: &'a [TrainInstance],
        registry: &'a DatabaseRegistry,
        vocab: &'a KeywordVocabulary,
        teacher: &'a dyn TeacherClient,
        config: BootstrapConfig,
    ) -> Result<Self, BootstrapError> {
        config.validate()?;
        Ok(Self {
            corpus,
            by_id: corpus.iter().map(|i| (i.instance_id.as_str(), i)).collect(),
            registry,
            vocab,
            teacher,
            config,
        })
    }

    pub fn config(&self) -> &BootstrapConfig {
        &self.config
    }

    fn generator(&self) -> Generator<'_> {
        Generator {
            registry: self.registry,
            vocab: self.vocab,
            client: self.teacher,
            model: &self.config.model,
            retry: self.config.retry,
        }
    }

    /// Parses and validates seed rationales. Invalid seeds are logged and
    /// skipped; it is an error if none survive or a seed names an unknown
    /// instance.
    pub fn validate_seeds(&self, seeds: &[SeedCot]) -> Result<(Vec<ValidatedCotRecord>, Vec<InstanceFailure>), BootstrapError> {
        let mut valid = Vec::new();
        let mut rejected = Vec::new();
        let mut sessions = SessionCache::new();
        for seed in seeds {
            let instance = *self
                .by_id
                .get(seed.instance_id.as_str())
                .ok_or_else(|| BootstrapError::UnknownSeedInstance(seed.instance_id.clone()))?;
            let reject = |kind, message: String| InstanceFailure {
                instance_id: seed.instance_id.clone(),
                kind,
                message,
            };
            let outcome = parse_cot(&seed.markdown)
                .map_err(|e| reject(FailureKind::Parse, e.to_string()))
                .and_then(|cot| {
                    let session = open_cached(&mut sessions, self.registry, &instance.db_id)
                        .map_err(|e| reject(FailureKind::Execution, e.to_string()))?;
                    let verdict = validate_cot_in(session, instance, &cot, self.registry)
                        .map_err(|e| reject(FailureKind::Execution, e.to_string()))?;
                    if !verdict.is_positive() {
                        return Err(reject(verdict.detail.into(), "seed rationale does not reproduce the gold result".into()));
                    }
                    ValidatedCotRecord::new(&instance.instance_id, &cot, verdict, Stage::Seed, 0, DecodingMode::Manual, self.vocab)
                        .map_err(|e| reject(FailureKind::Parse, e.to_string()))
                });
            match outcome {
                Ok(r) => valid.push(r),
                Err(f) => {
                    tracing::error!(instance = %f.instance_id, kind = ?f.kind, message = %f.message, "rejected seed rationale");
                    rejected.push(f);
                }
            }
        }
        if valid.is_empty() {
            return Err(BootstrapError::AllSeedsInvalid { rejected: rejected.len() });
        }
        Ok((valid, rejected))
    }

    /// One pass over `pending` against a frozen repository snapshot.
    pub fn run_iteration(&self, pending: &[&TrainInstance], repo: &Repository, iteration: u32) -> IterationReport {
        let decoding = select_decoding(iteration, &self.config);
        let pool = repo.records();
        let generator = self.generator();
        let outcomes = map_with_state(self.config.workers, pending, SessionCache::new, |sessions, inst| {
            let ranked = match rank_examples(&inst.gold_sql, Some(&inst.instance_id), pool, self.config.few_shot_n, self.vocab) {
                Ok(r) => r,
                Err(e) => return failure_for(inst, FailureKind::Prompt, e),
            };
            let exemplars: Vec<PromptExemplar<'_>> = ranked
                .iter()
                .filter_map(|r| {
                    let ex_inst = self.by_id.get(r.exemplar.instance_id.as_str())?;
                    Some(PromptExemplar {
                        instance: ex_inst,
                        cot_markdown: &r.exemplar.cot_markdown,
                    })
                })
                .collect();
            let prompt = match build_prompt(inst, &exemplars) {
                Ok(p) => p,
                Err(e) => return failure_for(inst, FailureKind::Prompt, e),
            };
            generator.attempt(sessions, inst, prompt, decoding, Stage::Teacher, iteration)
        });

        let mut report = IterationReport {
            iteration,
            decoding,
            attempted: pending.len(),
            new_records: Vec::new(),
            negative_records: Vec::new(),
            failures: Vec::new(),
        };
        for outcome in outcomes {
            match outcome {
                Attempt::Positive(r) => report.new_records.push(r),
                Attempt::Negative(r) => {
                    report.failures.push(InstanceFailure {
                        instance_id: r.instance_id.clone(),
                        kind: r.verdict.detail.into(),
                        message: String::new(),
                    });
                    report.negative_records.push(r);
                }
                Attempt::Failed(f) => report.failures.push(f),
            }
        }
        report
    }

    fn pending(&self, repo: &Repository) -> Vec<&'a TrainInstance> {
        let covered = repo.covered_instances();
        self.corpus
            .iter()
            .filter(|i| !covered.contains(i.instance_id.as_str()))
            .collect()
    }

    /// Runs iterations until plateau or `max_iterations`. With a store, the
    /// repository is appended after every iteration and a resumed run
    /// continues from the recorded state.
    pub fn bootstrap_loop(&self, seeds: Vec<ValidatedCotRecord>, store: Option<&RepositoryStore>) -> Result<BootstrapOutcome, BootstrapError> {
        if let Some(bad) = seeds.iter().find(|s| !s.is_positive()) {
            return Err(BootstrapError::NegativeSeed(bad.instance_id.clone()));
        }
        if seeds.is_empty() {
            return Err(BootstrapError::AllSeedsInvalid { rejected: 0 });
        }
        let (mut repo, mut state) = match store {
            Some(s) => (s.load()?, s.load_state()?),
            None => (Repository::new(), LoopState::default()),
        };
        let fresh: Vec<ValidatedCotRecord> = seeds.into_iter().filter(|s| repo.insert(s.clone())).collect();
        if let Some(s) = store {
            s.append(&fresh)?;
        }

        let mut reports = Vec::new();
        while !state.plateau && state.completed_iterations < self.config.max_iterations {
            let iteration = state.completed_iterations + 1;
            let pending = self.pending(&repo);
            let report = self.run_iteration(&pending, &repo, iteration);
            let inserted: Vec<ValidatedCotRecord> = report
                .new_records
                .iter()
                .chain(&report.negative_records)
                .filter(|r| repo.insert((*r).clone()))
                .cloned()
                .collect();
            if let Some(s) = store {
                s.append(&inserted)?;
            }
            state.completed_iterations = iteration;
            state.plateau = report.new_records.is_empty() && self.config.stop_on_plateau;
            if let Some(s) = store {
                s.save_state(state)?;
            }
            let covered = repo.covered_instances().len();
            tracing::info!(
                iteration,
                decoding = report.decoding.mode.as_str(),
                attempted = report.attempted,
                new_positive = report.new_records.len(),
                covered,
                total = self.corpus.len(),
                "bootstrap iteration finished"
            );
            reports.push(report);
        }
        Ok(BootstrapOutcome {
            repository: repo,
            reports,
            state,
        })
    }
}

/// Free-function form of [`Bootstrapper::bootstrap_loop`] without persistence.
pub fn bootstrap_loop(
    corpus: &[TrainInstance],
    seeds: Vec<ValidatedCotRecord>,
    teacher: &dyn TeacherClient,
    config: BootstrapConfig,
    registry: &DatabaseRegistry,
    vocab: &KeywordVocabulary,
) -> Result<BootstrapOutcome, BootstrapError> {
    Bootstrapper::new(corpus, registry, vocab, teacher, config)?.bootstrap_loop(seeds, None)
}
