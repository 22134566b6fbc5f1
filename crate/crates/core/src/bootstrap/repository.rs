//! Validated rationale records and their append-only JSONL store.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::teacher::DecodingMode;
use crate::execval::Verdict;
use crate::jsonl::{self, JsonlError};
use crate::rationale::{cot_hash, cot_length, parse_cot, serialize_cot, CotError, CotRationale};
use crate::sqllex::{vectorize, Exemplar, KeywordVocabulary, SqlVector};

/// Which stage of the pipeline produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Seed,
    Teacher,
    Rationalizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedCotRecord {
    pub instance_id: String,
    /// SHA-256 of `cot_markdown`.
    pub cot_hash: String,
    pub cot_markdown: String,
    pub final_sql: String,
    pub step_count: usize,
    pub char_count: usize,
    pub sql_vector: SqlVector,
    pub verdict: Verdict,
    pub stage: Stage,
    /// 0 for seeds and rationalizer output.
    pub iteration: u32,
    pub decoding: DecodingMode,
    pub created_at: DateTime<Utc>,
}

impl ValidatedCotRecord {
    pub fn new(
        instance_id: &str,
        cot: &CotRationale,
        verdict: Verdict,
        stage: Stage,
        iteration: u32,
        decoding: DecodingMode,
        vocab: &KeywordVocabulary,
    ) -> Result<Self, CotError> {
        let cot_markdown = serialize_cot(cot)?;
        let final_sql = cot.final_sql().to_string();
        let (step_count, char_count) = cot_length(cot);
        Ok(Self {
            instance_id: instance_id.to_string(),
            cot_hash: cot_hash(&cot_markdown),
            sql_vector: vectorize(&final_sql, vocab),
            cot_markdown,
            final_sql,
            step_count,
            char_count,
            verdict,
            stage,
            iteration,
            decoding,
            created_at: Utc::now(),
        })
    }

    pub fn is_positive(&self) -> bool {
        self.verdict.is_positive()
    }

    pub fn cot(&self) -> Result<CotRationale, CotError> {
        parse_cot(&self.cot_markdown)
    }

    fn key(&self) -> (String, String) {
        (self.instance_id.clone(), self.cot_hash.clone())
    }
}

impl Exemplar for ValidatedCotRecord {
    fn instance_id(&self) -> &str {
        &self.instance_id
    }

    fn sql_vector(&self) -> &SqlVector {
        &self.sql_vector
    }

    fn is_eligible(&self) -> bool {
        self.is_positive()
    }

    fn tie_key(&self) -> &str {
        &self.cot_hash
    }
}

/// In-memory repository keyed by (instance id, content hash). The first
/// record seen for a key is kept.
#[derive(Debug, Clone, Default)]
pub struct Repository {
    records: Vec<ValidatedCotRecord>,
    keys: HashSet<(String, String)>,
}

impl Repository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = ValidatedCotRecord>) -> Self {
        let mut repo = Self::new();
        for r in records {
            repo.insert(r);
        }
        repo
    }

    /// Returns false when the key is already present.
    pub fn insert(&mut self, record: ValidatedCotRecord) -> bool {
        if !self.keys.insert(record.key()) {
            return false;
        }
        self.records.push(record);
        true
    }

    pub fn contains(&self, record: &ValidatedCotRecord) -> bool {
        self.keys.contains(&record.key())
    }

    pub fn records(&self) -> &[ValidatedCotRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positive(&self) -> impl Iterator<Item = &ValidatedCotRecord> {
        self.records.iter().filter(|r| r.is_positive())
    }

    pub fn covered_instances(&self) -> BTreeSet<&str> {
        self.positive().map(|r| r.instance_id.as_str()).collect()
    }

    /// Instances covered by records satisfying `pred`.
    pub fn covered_where(&self, pred: impl Fn(&ValidatedCotRecord) -> bool) -> BTreeSet<&str> {
        self.positive()
            .filter(|r| pred(r))
            .map(|r| r.instance_id.as_str())
            .collect()
    }

    pub fn is_covered(&self, instance_id: &str) -> bool {
        self.positive().any(|r| r.instance_id == instance_id)
    }

    /// Positive records grouped by instance, in repository order.
    pub fn positives_by_instance(&self) -> BTreeMap<&str, Vec<&ValidatedCotRecord>> {
        let mut out: BTreeMap<&str, Vec<&ValidatedCotRecord>> = BTreeMap::new();
        for r in self.positive() {
            out.entry(r.instance_id.as_str()).or_default().push(r);
        }
        out
    }
}

/// Progress marker stored next to the repository file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopState {
    pub completed_iterations: u32,
    pub plateau: bool,
}

/// JSONL file of records plus a `.state.json` sidecar.
#[derive(Debug, Clone)]
pub struct RepositoryStore {
    path: PathBuf,
}

impl RepositoryStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn state_path(&self) -> PathBuf {
        let mut name = self.path.file_name().unwrap_or_default().to_os_string();
        name.push(".state.json");
        self.path.with_file_name(name)
    }

    /// A missing file is an empty repository.
    pub fn load(&self) -> Result<Repository, JsonlError> {
        Ok(Repository::from_records(jsonl::read_all_or_empty(&self.path)?))
    }

    pub fn append(&self, records: &[ValidatedCotRecord]) -> Result<(), JsonlError> {
        if records.is_empty() {
            return Ok(());
        }
        jsonl::append(&self.path, records)
    }

    /// Rewrites the file with duplicates removed, keeping first occurrences.
    pub fn compact(&self) -> Result<(usize, usize), JsonlError> {
        let raw: Vec<ValidatedCotRecord> = jsonl::read_all_or_empty(&self.path)?;
        let before = raw.len();
        let repo = Repository::from_records(raw);
        jsonl::write_all(&self.path, repo.records())?;
        Ok((before, repo.len()))
    }

    pub fn load_state(&self) -> Result<LoopState, JsonlError> {
        let path = self.state_path();
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(LoopState::default()),
            Err(source) => Err(JsonlError::Io { path, source }),
        }
    }

    pub fn save_state(&self, state: LoopState) -> Result<(), JsonlError> {
        let path = self.state_path();
        let tmp = path.with_extension("tmp");
        let io = |source| JsonlError::Io {
            path: path.clone(),
            source,
        };
        std::fs::write(&tmp, serde_json::to_string_pretty(&state)? + "\n").map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)
    }
}
