//! Fine-tuning datasets and stage coverage reports.
//!
//! Fine-tune JSONL records carry the fields `instance_id`, `difficulty`,
//! `input` (the zero-shot prompt), `target` (gold SQL or rationale markdown)
//! and `variant` (`gold`, `cot_short` or `cot_long`).

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{build_prompt, PromptError, Repository, Stage, ValidatedCotRecord};
use crate::corpus::{Difficulty, TrainInstance};
use crate::jsonl::{self, JsonlError};
use crate::percent::Percent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotVariant {
    Gold,
    CotShort,
    CotLong,
}

impl CotVariant {
    pub const ALL: [CotVariant; 3] = [CotVariant::Gold, CotVariant::CotShort, CotVariant::CotLong];

    pub fn as_str(self) -> &'static str {
        match self {
            CotVariant::Gold => "gold",
            CotVariant::CotShort => "cot_short",
            CotVariant::CotLong => "cot_long",
        }
    }
}

impl FromStr for CotVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CotVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected gold, cot_short or cot_long)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageScope {
    CoveredOnly,
    Full,
}

impl CoverageScope {
    pub fn as_str(self) -> &'static str {
        match self {
            CoverageScope::CoveredOnly => "covered_only",
            CoverageScope::Full => "full",
        }
    }
}

impl FromStr for CoverageScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "covered_only" => Ok(CoverageScope::CoveredOnly),
            "full" => Ok(CoverageScope::Full),
            _ => Err(format!("unknown scope `{s}` (expected covered_only or full)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("no positive rationale to select from")]
    NoRecords,
    #[error("variant `gold` has no rationale to select")]
    NotACotVariant,
    #[error("full scope requires every instance to be covered; {} are not (first: {})", .0.len(), .0[0])]
    ScopeViolation(Vec<String>),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

/// Picks the shortest (`cot_short`) or longest (`cot_long`) record by step
/// count, then by character count. Remaining ties go to the smallest
/// content hash.
pub fn select_cot_variant<'a>(records: &[&'a ValidatedCotRecord], variant: CotVariant) -> Result<&'a ValidatedCotRecord, ExportError> {
    let by_length = |r: &&ValidatedCotRecord| (r.step_count, r.char_count);
    let pick = match variant {
        CotVariant::Gold => return Err(ExportError::NotACotVariant),
        CotVariant::CotShort => records
            .iter()
            .min_by(|a, b| by_length(a).cmp(&by_length(b)).then_with(|| a.cot_hash.cmp(&b.cot_hash))),
        CotVariant::CotLong => records
            .iter()
            .max_by(|a, b| by_length(a).cmp(&by_length(b)).then_with(|| b.cot_hash.cmp(&a.cot_hash))),
    };
    pick.copied().ok_or(ExportError::NoRecords)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneExample {
    pub instance_id: String,
    pub difficulty: Difficulty,
    pub input: String,
    pub target: String,
    pub variant: CotVariant,
}

/// One example per in-scope instance, in corpus order.
pub fn finetune_examples(
    corpus: &[TrainInstance],
    repo: &Repository,
    variant: CotVariant,
    scope: CoverageScope,
) -> Result<Vec<FinetuneExample>, ExportError> {
    let by_instance = repo.positives_by_instance();
    if scope == CoverageScope::Full && variant != CotVariant::Gold {
        let uncovered: Vec<String> = corpus
            .iter()
            .filter(|i| !by_instance.contains_key(i.instance_id.as_str()))
            .map(|i| i.instance_id.clone())
            .collect();
        if !uncovered.is_empty() {
            return Err(ExportError::ScopeViolation(uncovered));
        }
    }
    let mut out = Vec::new();
    for inst in corpus {
        let records = by_instance.get(inst.instance_id.as_str());
        if scope == CoverageScope::CoveredOnly && records.is_none() {
            continue;
        }
        let target = match variant {
            CotVariant::Gold => inst.gold_sql.trim().to_string(),
            _ => select_cot_variant(records.map_or(&[][..], |r| r.as_slice()), variant)?
                .cot_markdown
                .clone(),
        };
        out.push(FinetuneExample {
            instance_id: inst.instance_id.clone(),
            difficulty: inst.difficulty,
            input: build_prompt(inst, &[])?,
            target,
            variant,
        });
    }
    Ok(out)
}

/// Writes [`finetune_examples`] to `path` and returns the example count.
pub fn export_finetune_set(
    corpus: &[TrainInstance],
    repo: &Repository,
    variant: CotVariant,
    scope: CoverageScope,
    path: &Path,
) -> Result<usize, ExportError> {
    let examples = finetune_examples(corpus, repo, variant, scope)?;
    jsonl::write_all(path, &examples)?;
    Ok(examples.len())
}

/// Names and model labels of the three coverage stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageLabels {
    pub manual: (String, String),
    pub dynamic: (String, String),
    pub rationalizer: (String, String),
}

impl Default for StageLabels {
    fn default() -> Self {
        Self {
            manual: ("Manual Few-shot".into(), "teacher".into()),
            dynamic: ("Dynamic Few-shot".into(), "teacher".into()),
            rationalizer: ("Fine-tuning".into(), "rationalizer".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub stage: String,
    pub model: String,
    pub covered: usize,
    pub total: usize,
    pub percent: Percent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
}

/// Cumulative coverage after each stage. The manual stage counts seeds and
/// first-iteration teacher output, the dynamic stage all teacher output,
/// and the last stage everything including the rationalizer.
pub fn coverage_report(corpus: &[TrainInstance], repo: &Repository, labels: &StageLabels) -> CoverageReport {
    let ids: std::collections::HashSet<&str> = corpus.iter().map(|i| i.instance_id.as_str()).collect();
    let total = corpus.len();
    let count = |pred: &dyn Fn(&ValidatedCotRecord) -> bool| {
        repo.covered_where(pred)
            .into_iter()
            .filter(|id| ids.contains(id))
            .count()
    };
    let manual = count(&|r| r.stage == Stage::Seed || (r.stage == Stage::Teacher && r.iteration <= 1));
    let dynamic = count(&|r| r.stage != Stage::Rationalizer);
    let all = count(&|_| true);
    let row = |(stage, model): &(String, String), covered: usize| CoverageRow {
        stage: stage.clone(),
        model: model.clone(),
        covered,
        total,
        percent: Percent::ratio(covered as u64, total as u64),
    };
    CoverageReport {
        rows: vec![
            row(&labels.manual, manual),
            row(&labels.dynamic, dynamic),
            row(&labels.rationalizer, all),
        ],
    }
}

impl CoverageReport {
    /// Aligned text table.
    pub fn to_text(&self) -> String {
        let headers = ["Stage", "Model", "Covered", "Total", "Coverage (%)"].map(String::from);
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.stage.clone(),
                    r.model.clone(),
                    r.covered.to_string(),
                    r.total.to_string(),
                    r.percent.to_string(),
                ]
            })
            .collect();
        render_table(&headers, &cells, &[false, false, true, true, true])
    }
}

/// Renders rows under headers; `right[i]` right-aligns column `i`.
pub(crate) fn render_table(headers: &[String], rows: &[Vec<String>], right: &[bool]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            if right.get(i).copied().unwrap_or(false) {
                let _ = write!(s, "{c:>w$}", w = widths[i]);
            } else {
                let _ = write!(s, "{c:<w$}", w = widths[i]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(headers);
    out.push_str(&line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bootstrap::repo_fixtures::record;

    fn with_len(id: &str, steps: usize, chars: usize, hash: &str) -> ValidatedCotRecord {
        let mut r = record(id, "SELECT 1", true);
        r.step_count = steps;
        r.char_count = chars;
        r.cot_hash = hash.into();
        r
    }

    #[test]
    fn extremal_selection_and_tie_breaks() {
        let a = with_len("x", 3, 500, "c");
        let b = with_len("x", 5, 100, "b");
        let c = with_len("x", 6, 100, "a");
        let all = [&a, &b, &c];
        assert_eq!(select_cot_variant(&all, CotVariant::CotShort).unwrap().step_count, 3);
        assert_eq!(select_cot_variant(&all, CotVariant::CotLong).unwrap().step_count, 6);

        let d = with_len("x", 4, 900, "d");
        let e = with_len("x", 4, 1200, "e");
        assert_eq!(select_cot_variant(&[&d, &e], CotVariant::CotShort).unwrap().char_count, 900);
        assert_eq!(select_cot_variant(&[&d, &e], CotVariant::CotLong).unwrap().char_count, 1200);

        let f = with_len("x", 4, 900, "a");
        assert_eq!(select_cot_variant(&[&d, &f], CotVariant::CotShort).unwrap().cot_hash, "a");
        assert_eq!(select_cot_variant(&[&d, &f], CotVariant::CotLong).unwrap().cot_hash, "a");

        assert_eq!(select_cot_variant(&[&a], CotVariant::CotShort).unwrap(), &a);
        assert_eq!(select_cot_variant(&[&a], CotVariant::CotLong).unwrap(), &a);
        assert!(matches!(select_cot_variant(&[], CotVariant::CotLong), Err(ExportError::NoRecords)));
    }

    #[test]
    fn empty_repo_reports_zero() {
        let report = coverage_report(&[], &Repository::new(), &StageLabels::default());
        assert!(report.rows.iter().all(|r| r.percent == Percent::ZERO));
        let text = report.to_text();
        assert!(text.starts_with("Stage"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn variant_and_scope_names() {
        for v in CotVariant::ALL {
            assert_eq!(v.as_str().parse::<CotVariant>().unwrap(), v);
        }
        assert_eq!("full".parse::<CoverageScope>().unwrap(), CoverageScope::Full);
        assert!("x".parse::<CoverageScope>().is_err());
    }
}
