//! Execution accuracy of prediction files, stratified by difficulty.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bootstrap::{open_cached, SessionCache};
use crate::corpus::{Difficulty, TrainInstance};
use crate::execval::{compare_options_for, judge, ExecError, VerdictDetail};
use crate::export::render_table;
use crate::jsonl::{self, JsonlError};
use crate::parallel::map_with_state;
use crate::percent::Percent;
use crate::rationale::parse_cot;
use crate::registry::DatabaseRegistry;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction for `{0}` appears more than once")]
    DuplicatePrediction(String),
    #[error("prediction for `{0}` does not match any dev instance")]
    UnknownInstance(String),
    #[error("gold SQL of `{instance_id}` failed: {source}")]
    Gold {
        instance_id: String,
        #[source]
        source: ExecError,
    },
    #[error("database for `{instance_id}`: {source}")]
    Database {
        instance_id: String,
        #[source]
        source: ExecError,
    },
    #[error("reports were computed on different dev sets ({0} vs {1})")]
    DevsetMismatch(String, String),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionLine {
    instance_id: String,
    prediction: String,
}

/// Predictions keyed by instance id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionFile {
    pub predictions: BTreeMap<String, String>,
}

impl PredictionFile {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self, EvalError> {
        let mut predictions = BTreeMap::new();
        for (id, p) in pairs {
            if predictions.contains_key(&id) {
                return Err(EvalError::DuplicatePrediction(id));
            }
            predictions.insert(id, p);
        }
        Ok(Self { predictions })
    }

    /// Reads JSONL lines of `{"instance_id": ..., "prediction": ...}`.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let lines: Vec<PredictionLine> = jsonl::read_all(path)?;
        Self::from_pairs(lines.into_iter().map(|l| (l.instance_id, l.prediction)))
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let lines: Vec<PredictionLine> = self
            .predictions
            .iter()
            .map(|(k, v)| PredictionLine {
                instance_id: k.clone(),
                prediction: v.clone(),
            })
            .collect();
        Ok(jsonl::write_all(path, &lines)?)
    }
}

/// The SQL to execute for a prediction: the final SQL of a rationale, or
/// the text itself when it does not parse as one.
pub fn prediction_sql(prediction: &str) -> String {
    match parse_cot(prediction) {
        Ok(cot) => cot.final_sql().to_string(),
        Err(_) => prediction.trim().to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    ResultMismatch,
    ExecutionError,
    Timeout,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub instance_id: String,
    pub difficulty: Difficulty,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub count: usize,
    pub correct: usize,
    pub accuracy: Percent,
}

impl CategoryScore {
    fn from_counts(correct: usize, count: usize) -> Self {
        Self {
            count,
            correct,
            accuracy: Percent::ratio(correct as u64, count as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    /// SHA-256 over the sorted (instance id, gold SQL) pairs of the dev set.
    pub devset: String,
    pub categories: BTreeMap<Difficulty, CategoryScore>,
    pub total: CategoryScore,
    pub instances: Vec<InstanceResult>,
}

pub fn devset_fingerprint(devset: &[TrainInstance]) -> String {
    let mut pairs: Vec<(&str, &str)> = devset.iter().map(|i| (i.instance_id.as_str(), i.gold_sql.as_str())).collect();
    pairs.sort();
    let mut h = Sha256::new();
    for (id, sql) in pairs {
        h.update(id.as_bytes());
        h.update([0]);
        h.update(sql.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

/// Scores every dev instance. Missing predictions and predictions that fail
/// to execute count as incorrect.
pub fn score_predictions(
    devset: &[TrainInstance],
    predictions: &PredictionFile,
    registry: &DatabaseRegistry,
    workers: usize,
) -> Result<EvalReport, EvalError> {
    let ids: HashSet<&str> = devset.iter().map(|i| i.instance_id.as_str()).collect();
    if let Some(unknown) = predictions.predictions.keys().find(|k| !ids.contains(k.as_str())) {
        return Err(EvalError::UnknownInstance(unknown.clone()));
    }
    let results = map_with_state(workers, devset, SessionCache::new, |sessions, inst| -> Result<InstanceResult, EvalError> {
        let result = |outcome| InstanceResult {
            instance_id: inst.instance_id.clone(),
            difficulty: inst.difficulty,
            outcome,
        };
        let Some(prediction) = predictions.predictions.get(&inst.instance_id) else {
            return Ok(result(Outcome::Missing));
        };
        let session = open_cached(sessions, registry, &inst.db_id).map_err(|source| EvalError::Database {
            instance_id: inst.instance_id.clone(),
            source,
        })?;
        let gold = session.execute(&inst.gold_sql).map_err(|source| EvalError::Gold {
            instance_id: inst.instance_id.clone(),
            source,
        })?;
        let opts = compare_options_for(&inst.gold_sql, registry);
        let verdict = judge(session, &gold, &prediction_sql(prediction), opts).map_err(|source| EvalError::Gold {
            instance_id: inst.instance_id.clone(),
            source,
        })?;
        Ok(result(match verdict.detail {
            VerdictDetail::Match => Outcome::Correct,
            VerdictDetail::ResultMismatch => Outcome::ResultMismatch,
            VerdictDetail::FinalSqlError => Outcome::ExecutionError,
            VerdictDetail::FinalSqlTimeout => Outcome::Timeout,
        }))
    });
    let instances = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(devset_fingerprint(devset), instances))
}

fn aggregate(devset: String, instances: Vec<InstanceResult>) -> EvalReport {
    let mut counts: BTreeMap<Difficulty, (usize, usize)> = BTreeMap::new();
    for r in &instances {
        let e = counts.entry(r.difficulty).or_default();
        e.1 += 1;
        if r.outcome == Outcome::Correct {
            e.0 += 1;
        }
    }
    let correct = counts.values().map(|c| c.0).sum();
    let total = CategoryScore::from_counts(correct, instances.len());
    EvalReport {
        devset,
        categories: counts.into_iter().map(|(d, (c, n))| (d, CategoryScore::from_counts(c, n))).collect(),
        total,
        instances,
    }
}

impl EvalReport {
    /// A report holding only published percentages, without per-instance
    /// results. Counts are zero.
    pub fn from_summary(devset: impl Into<String>, categories: &[(Difficulty, Percent)], total: Percent) -> Self {
        let score = |accuracy| CategoryScore {
            count: 0,
            correct: 0,
            accuracy,
        };
        Self {
            devset: devset.into(),
            categories: categories.iter().map(|&(d, p)| (d, score(p))).collect(),
            total: score(total),
            instances: Vec::new(),
        }
    }

    pub fn accuracy(&self, difficulty: Difficulty) -> Option<Percent> {
        self.categories.get(&difficulty).map(|c| c.accuracy)
    }

    /// One row per report, with a column per difficulty and the total.
    pub fn table(rows: &[(&str, &EvalReport)]) -> String {
        let mut diffs: Vec<Difficulty> = rows.iter().flat_map(|(_, r)| r.categories.keys().copied()).collect();
        diffs.sort();
        diffs.dedup();
        let headers: Vec<String> = std::iter::once("Model".to_string())
            .chain(diffs.iter().map(|d| capitalize(d.as_str())))
            .chain(std::iter::once("Total".to_string()))
            .collect();
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|(name, r)| {
                std::iter::once(name.to_string())
                    .chain(diffs.iter().map(|d| r.accuracy(*d).map_or("-".into(), |p| p.to_string())))
                    .chain(std::iter::once(r.total.accuracy.to_string()))
                    .collect()
            })
            .collect();
        dyn_table(&headers, &cells)
    }

    pub fn to_text(&self) -> String {
        let mut out = EvalReport::table(&[("accuracy (%)", self)]);
        let counts: Vec<String> = self
            .categories
            .iter()
            .map(|(d, c)| format!("{} {}/{}", d.as_str(), c.correct, c.count))
            .collect();
        out.push_str(&format!("counts: {}; total {}/{}\n", counts.join(", "), self.total.correct, self.total.count));
        out
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map_or(String::new(), |f| f.to_uppercase().chain(c).collect())
}

fn dyn_table(headers: &[String], rows: &[Vec<String>]) -> String {
    let right: Vec<bool> = (0..headers.len()).map(|i| i > 0).collect();
    render_table(headers, rows, &right)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDiff {
    /// `b - a` in percentage points.
    pub categories: BTreeMap<Difficulty, Percent>,
    pub total: Percent,
    /// Incorrect in `a`, correct in `b`.
    pub fixed: Vec<String>,
    /// Correct in `a`, incorrect in `b`.
    pub regressed: Vec<String>,
}

pub fn diff_reports(a: &EvalReport, b: &EvalReport) -> Result<ReportDiff, EvalError> {
    if a.devset != b.devset {
        return Err(EvalError::DevsetMismatch(a.devset.clone(), b.devset.clone()));
    }
    let categories = a
        .categories
        .keys()
        .chain(b.categories.keys())
        .map(|d| {
            let pa = a.accuracy(*d).unwrap_or(Percent::ZERO);
            let pb = b.accuracy(*d).unwrap_or(Percent::ZERO);
            (*d, pb - pa)
        })
        .collect();
    let correct_in = |r: &EvalReport| -> BTreeMap<String, bool> {
        r.instances
            .iter()
            .map(|i| (i.instance_id.clone(), i.outcome == Outcome::Correct))
            .collect()
    };
    let (ca, cb) = (correct_in(a), correct_in(b));
    let mut fixed = Vec::new();
    let mut regressed = Vec::new();
    for (id, was) in &ca {
        match (was, cb.get(id)) {
            (false, Some(true)) => fixed.push(id.clone()),
            (true, Some(false)) => regressed.push(id.clone()),
            _ => {}
        }
    }
    Ok(ReportDiff {
        categories,
        total: b.total.accuracy - a.total.accuracy,
        fixed,
        regressed,
    })
}

impl ReportDiff {
    pub fn to_text(&self) -> String {
        let headers: Vec<String> = std::iter::once("Delta".to_string())
            .chain(self.categories.keys().map(|d| capitalize(d.as_str())))
            .chain(std::iter::once("Total".to_string()))
            .collect();
        let row: Vec<String> = std::iter::once("b - a".to_string())
            .chain(self.categories.values().map(|p| p.signed()))
            .chain(std::iter::once(self.total.signed()))
            .collect();
        let mut out = dyn_table(&headers, &[row]);
        out.push_str(&format!("fixed: {}, regressed: {}\n", self.fixed.len(), self.regressed.len()));
        out
    }
}
