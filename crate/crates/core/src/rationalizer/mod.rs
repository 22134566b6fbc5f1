//! Answer-aware rationalization of instances the teacher could not cover,
//! and review of the gold statements it disagrees with.

mod mock;
mod procedural;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use mock::{ProceduralTeacher, SuccessRule, WRONG_ANSWER_SQL};
pub use procedural::{procedural_rationalize, procedural_rationalize_in};

use crate::bootstrap::{
    build_rationalization_prompt, failure_for, Attempt, DecodingMode, DecodingParams, FailureKind, Generator, InstanceFailure,
    Repository, RetryPolicy, SessionCache, Stage, TeacherClient, ValidatedCotRecord,
};
use crate::corpus::TrainInstance;
use crate::execval::{MismatchSummary, VerdictDetail};
use crate::export::{select_cot_variant, CotVariant, ExportError};
use crate::jsonl::{self, JsonlError};
use crate::parallel::map_with_state;
use crate::registry::DatabaseRegistry;
use crate::sqllex::KeywordVocabulary;

#[derive(Debug, thiserror::Error)]
pub enum RationalizerError {
    #[error("repository holds no positive rationale to train on")]
    EmptyRepository,
    #[error("review decision references unknown flag `{0}`")]
    UnknownFlag(String),
    #[error("review decision for `{0}` appears more than once")]
    DuplicateDecision(String),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

/// One line of the rationalization training set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationalizationExample {
    pub instance_id: String,
    /// Answer-aware prompt with the gold SQL in a `[SQL]` block.
    pub input: String,
    pub output: String,
}

/// One example per covered instance, in corpus order, using the longest
/// positive rationale.
pub fn rationalization_examples(repo: &Repository, corpus: &[TrainInstance]) -> Result<Vec<RationalizationExample>, RationalizerError> {
    let by_instance = repo.positives_by_instance();
    if by_instance.is_empty() {
        return Err(RationalizerError::EmptyRepository);
    }
    let mut out = Vec::new();
    for inst in corpus {
        let Some(records) = by_instance.get(inst.instance_id.as_str()) else {
            continue;
        };
        let best = select_cot_variant(records, CotVariant::CotLong)?;
        out.push(RationalizationExample {
            instance_id: inst.instance_id.clone(),
            input: build_rationalization_prompt(inst).map_err(ExportError::from)?,
            output: best.cot_markdown.clone(),
        });
    }
    Ok(out)
}

pub fn export_rationalization_trainset(repo: &Repository, corpus: &[TrainInstance], path: &Path) -> Result<usize, RationalizerError> {
    let examples = rationalization_examples(repo, corpus)?;
    jsonl::write_all(path, &examples)?;
    Ok(examples.len())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    #[default]
    Unreviewed,
    GoldWrong,
    GenerationWrong,
}

/// A rationalizer answer that disagrees with the stored gold statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InconsistencyFlag {
    pub flag_id: String,
    pub instance_id: String,
    pub question: String,
    pub gold_sql: String,
    pub generated_final_sql: String,
    pub detail: VerdictDetail,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch: Option<MismatchSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub disposition: Disposition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RationalizerConfig {
    pub model: String,
    /// Attempts per instance. The first decodes greedily, later ones sample.
    pub attempts: u32,
    pub sampling_temperature: f64,
    pub sampling_seed: u64,
    pub workers: usize,
    pub retry: RetryPolicy,
}

impl Default for RationalizerConfig {
    fn default() -> Self {
        Self {
            model: "rationalizer".into(),
            attempts: 1,
            sampling_temperature: 0.7,
            sampling_seed: 0,
            workers: 4,
            retry: RetryPolicy::default(),
        }
    }
}

impl RationalizerConfig {
    fn decoding(&self, attempt: u32) -> DecodingParams {
        if attempt == 0 {
            DecodingParams::greedy()
        } else {
            DecodingParams {
                mode: DecodingMode::Sampling,
                temperature: self.sampling_temperature,
                seed: Some(self.sampling_seed.wrapping_add(u64::from(attempt))),
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct RationalizerOutcome {
    pub records: Vec<ValidatedCotRecord>,
    pub negative_records: Vec<ValidatedCotRecord>,
    pub flags: Vec<InconsistencyFlag>,
    /// Parse, transport and execution failures. These raise no flag.
    pub failures: Vec<InstanceFailure>,
}

/// Rationalizes every instance of `pending` that has no positive record
/// in `repo`. Positive results are returned as new records; an instance
/// whose last attempt validated negative is flagged.
pub fn apply_rationalizer(
    pending: &[TrainInstance],
    repo: &Repository,
    client: &dyn TeacherClient,
    registry: &DatabaseRegistry,
    vocab: &KeywordVocabulary,
    config: &RationalizerConfig,
) -> RationalizerOutcome {
    let todo: Vec<&TrainInstance> = pending.iter().filter(|i| !repo.is_covered(&i.instance_id)).collect();
    let generator = Generator {
        registry,
        vocab,
        client,
        model: &config.model,
        retry: config.retry,
    };
    let results = map_with_state(config.workers, &todo, SessionCache::new, |sessions, inst| {
        let prompt = match build_rationalization_prompt(inst) {
            Ok(p) => p,
            Err(e) => return vec![failure_for(inst, FailureKind::Prompt, e)],
        };
        let mut attempts = Vec::new();
        for k in 0..config.attempts.max(1) {
            let a = generator.attempt(sessions, inst, prompt.clone(), config.decoding(k), Stage::Rationalizer, 0);
            let done = matches!(a, Attempt::Positive(_));
            attempts.push(a);
            if done {
                break;
            }
        }
        attempts
    });

    let mut out = RationalizerOutcome::default();
    for (inst, attempts) in todo.iter().zip(results) {
        let last_negative = matches!(attempts.last(), Some(Attempt::Negative(_)));
        let n = attempts.len();
        for (k, a) in attempts.into_iter().enumerate() {
            match a {
                Attempt::Positive(r) => out.records.push(r),
                Attempt::Negative(r) => {
                    if last_negative && k + 1 == n {
                        out.flags.push(InconsistencyFlag {
                            flag_id: inst.instance_id.clone(),
                            instance_id: inst.instance_id.clone(),
                            question: inst.question.clone(),
                            gold_sql: inst.gold_sql.clone(),
                            generated_final_sql: r.final_sql.clone(),
                            detail: r.verdict.detail,
                            mismatch: r.verdict.mismatch.clone(),
                            error: r.verdict.error.clone(),
                            disposition: Disposition::Unreviewed,
                        });
                    }
                    out.negative_records.push(r);
                }
                Attempt::Failed(f) => out.failures.push(f),
            }
        }
    }
    out
}

/// A reviewer's verdict on one flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub flag_id: String,
    pub disposition: Disposition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_gold_sql: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageAction {
    Excluded,
    GoldReplaced,
    ReturnedToPending,
    Unreviewed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub flag_id: String,
    pub instance_id: String,
    pub disposition: Disposition,
    pub action: TriageAction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageAudit {
    pub entries: Vec<AuditEntry>,
    pub excluded: usize,
    pub gold_replaced: usize,
    pub returned_to_pending: usize,
    pub unreviewed: usize,
}

#[derive(Debug, Clone)]
pub struct TriageOutcome {
    pub corpus: Vec<TrainInstance>,
    /// Instance ids that stay in the corpus without a positive rationale.
    pub pending: Vec<String>,
    pub audit: TriageAudit,
}

/// Applies review decisions. `gold_wrong` removes the instance, or replaces
/// its gold SQL when a correction is supplied; `generation_wrong` keeps it
/// pending; flags without a decision stay unreviewed.
pub fn triage_inconsistencies(
    corpus: &[TrainInstance],
    flags: &[InconsistencyFlag],
    decisions: &[ReviewDecision],
) -> Result<TriageOutcome, RationalizerError> {
    let flag_ids: HashMap<&str, &InconsistencyFlag> = flags.iter().map(|f| (f.flag_id.as_str(), f)).collect();
    let mut by_flag: BTreeMap<&str, &ReviewDecision> = BTreeMap::new();
    for d in decisions {
        if !flag_ids.contains_key(d.flag_id.as_str()) {
            return Err(RationalizerError::UnknownFlag(d.flag_id.clone()));
        }
        if by_flag.insert(&d.flag_id, d).is_some() {
            return Err(RationalizerError::DuplicateDecision(d.flag_id.clone()));
        }
    }

    let mut audit = TriageAudit::default();
    let mut exclude: HashMap<&str, ()> = HashMap::new();
    let mut replace: HashMap<&str, &str> = HashMap::new();
    let mut pending = Vec::new();
    for flag in flags {
        let decision = by_flag.get(flag.flag_id.as_str());
        let disposition = decision.map_or(Disposition::Unreviewed, |d| d.disposition);
        let action = match (disposition, decision.and_then(|d| d.corrected_gold_sql.as_deref())) {
            (Disposition::GoldWrong, Some(sql)) if !sql.trim().is_empty() => {
                replace.insert(&flag.instance_id, sql);
                audit.gold_replaced += 1;
                pending.push(flag.instance_id.clone());
                TriageAction::GoldReplaced
            }
            (Disposition::GoldWrong, _) => {
                exclude.insert(&flag.instance_id, ());
                audit.excluded += 1;
                TriageAction::Excluded
            }
            (Disposition::GenerationWrong, _) => {
                audit.returned_to_pending += 1;
                pending.push(flag.instance_id.clone());
                TriageAction::ReturnedToPending
            }
            (Disposition::Unreviewed, _) => {
                audit.unreviewed += 1;
                TriageAction::Unreviewed
            }
        };
        audit.entries.push(AuditEntry {
            flag_id: flag.flag_id.clone(),
            instance_id: flag.instance_id.clone(),
            disposition,
            action,
        });
    }

    let corpus = corpus
        .iter()
        .filter(|i| !exclude.contains_key(i.instance_id.as_str()))
        .map(|i| {
            let mut i = i.clone();
            if let Some(sql) = replace.get(i.instance_id.as_str()) {
                i.gold_sql = sql.trim().to_string();
            }
            i
        })
        .collect();
    Ok(TriageOutcome { corpus, pending, audit })
}
