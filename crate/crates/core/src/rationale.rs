//! Step-by-step SQL-building rationales and their Markdown form.
//!
//! A rationale is a sequence of bold `**Step N: title**` headings, each
//! optionally underlined with `--`, followed by prose and at most one
//! ```` ```sql ```` fenced block. The last step carries the final SQL.
//!
//! Canonical serialization (byte-exact):
//!
//! ```text
//! **Step {n}: {title}**\n
//! --\n
//! [\n{prose}\n]            when prose is non-empty
//! [\n```sql\n{sql}\n```\n]  when the step has SQL
//! [\n{notes}\n]            when notes are non-empty
//! \n                        between steps
//! [\n{trailer}\n]          after the last step, when present
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotStep {
    /// 1-based ordinal.
    pub index: u32,
    pub title: String,
    /// Text between the heading and the step's SQL block.
    pub prose: String,
    pub sql: Option<String>,
    /// Text after the SQL block of a non-final step.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotRationale {
    pub steps: Vec<CotStep>,
    pub trailer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CotError {
    #[error("no step headings found")]
    NoSteps,
    #[error("non-contiguous step numbering at step {found} (expected step {expected})")]
    NonContiguous { expected: u32, found: u32 },
    #[error("last step {step} lacks a sql block")]
    LastStepWithoutSql { step: u32 },
    #[error("a rationale needs at least 2 steps, found {0}")]
    TooFewSteps(usize),
    #[error("step {step}: sql block is empty")]
    EmptySql { step: u32 },
    #[error("step {step}: {message}")]
    InvalidText { step: u32, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseWarning {
    /// Text before the first step heading was dropped.
    DiscardedPreamble { chars: usize },
    /// A step had more than one sql fence; the extras were kept as text.
    ExtraSqlBlock { step: u32 },
    /// An empty sql fence was kept as text.
    EmptySqlBlock { step: u32 },
    UnterminatedFence { step: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCot {
    pub cot: CotRationale,
    pub warnings: Vec<ParseWarning>,
}

impl CotRationale {
    /// Checks the structural invariants that every rationale must satisfy.
    pub fn validate(&self) -> Result<(), CotError> {
        if self.steps.len() < 2 {
            return Err(CotError::TooFewSteps(self.steps.len()));
        }
        for (i, step) in self.steps.iter().enumerate() {
            let expected = i as u32 + 1;
            if step.index != expected {
                return Err(CotError::NonContiguous {
                    expected,
                    found: step.index,
                });
            }
            if let Some(sql) = &step.sql {
                if sql.trim().is_empty() {
                    return Err(CotError::EmptySql { step: step.index });
                }
            }
        }
        let last = self.steps.last().expect("len checked");
        if last.sql.is_none() {
            return Err(CotError::LastStepWithoutSql { step: last.index });
        }
        Ok(())
    }

    pub fn final_sql(&self) -> &str {
        self.steps
            .last()
            .and_then(|s| s.sql.as_deref())
            .expect("validated rationale ends with a sql step")
    }

    pub fn sql_steps(&self) -> impl Iterator<Item = (u32, &str)> {
        self.steps
            .iter()
            .filter_map(|s| s.sql.as_deref().map(|sql| (s.index, sql)))
    }
}

pub fn final_sql(cot: &CotRationale) -> &str {
    cot.final_sql()
}

/// `(step_count, char_count)`, the latter measured on the canonical form.
pub fn cot_length(cot: &CotRationale) -> (usize, usize) {
    (cot.steps.len(), render(cot).chars().count())
}

/// Hex SHA-256 of a canonical rationale document.
pub fn cot_hash(markdown: &str) -> String {
    hex::encode(Sha256::digest(markdown.as_bytes()))
}

pub fn parse_cot(markdown: &str) -> Result<CotRationale, CotError> {
    parse_cot_with_warnings(markdown).map(|p| p.cot)
}

pub fn parse_cot_with_warnings(markdown: &str) -> Result<ParsedCot, CotError> {
    let lines: Vec<&str> = markdown.lines().collect();
    let mut warnings = Vec::new();

    // Locate headings outside fenced blocks.
    let mut headings: Vec<(usize, u32, String)> = Vec::new();
    let mut fence: Option<usize> = None;
    for (i, line) in lines.iter().enumerate() {
        if let Some(width) = fence {
            if closes_fence(line, width) {
                fence = None;
            }
            continue;
        }
        if let Some((width, _)) = opens_fence(line) {
            fence = Some(width);
            continue;
        }
        if let Some((n, title)) = parse_heading(line) {
            headings.push((i, n, title));
        }
    }

    if headings.is_empty() {
        return Err(CotError::NoSteps);
    }
    let preamble: usize = lines[..headings[0].0].iter().map(|l| l.trim().chars().count()).sum();
    if preamble > 0 {
        warnings.push(ParseWarning::DiscardedPreamble { chars: preamble });
    }

    let mut steps = Vec::with_capacity(headings.len());
    let mut trailer = None;
    for (h, (line_idx, n, title)) in headings.iter().enumerate() {
        let expected = h as u32 + 1;
        if *n != expected {
            return Err(CotError::NonContiguous {
                expected,
                found: *n,
            });
        }
        let end = headings.get(h + 1).map_or(lines.len(), |next| next.0);
        let mut body = &lines[line_idx + 1..end];
        while body.first().is_some_and(|l| l.trim().is_empty()) {
            body = &body[1..];
        }
        if body.first().is_some_and(|l| is_underline(l)) {
            body = &body[1..];
        }
        let split = split_body(body, *n, &mut warnings);
        let is_last = h + 1 == headings.len();
        if is_last {
            if !split.after.is_empty() {
                trailer = Some(split.after);
            }
            steps.push(CotStep {
                index: *n,
                title: title.clone(),
                prose: split.before,
                sql: split.sql,
                notes: String::new(),
            });
        } else {
            steps.push(CotStep {
                index: *n,
                title: title.clone(),
                prose: split.before,
                sql: split.sql,
                notes: split.after,
            });
        }
    }

    let cot = CotRationale { steps, trailer };
    if let Some(last) = cot.steps.last() {
        if last.sql.is_none() {
            return Err(CotError::LastStepWithoutSql { step: last.index });
        }
    }
    cot.validate()?;
    Ok(ParsedCot { cot, warnings })
}

struct BodySplit {
    before: String,
    sql: Option<String>,
    after: String,
}

fn split_body(body: &[&str], step: u32, warnings: &mut Vec<ParseWarning>) -> BodySplit {
    let mut before: Vec<&str> = Vec::new();
    let mut after: Vec<&str> = Vec::new();
    let mut sql: Option<String> = None;
    let mut i = 0;
    while i < body.len() {
        let line = body[i];
        let Some((width, info)) = opens_fence(line) else {
            if sql.is_some() { after.push(line) } else { before.push(line) }
            i += 1;
            continue;
        };
        // Find the closing fence.
        let mut j = i + 1;
        while j < body.len() && !closes_fence(body[j], width) {
            j += 1;
        }
        let closed = j < body.len();
        let content_end = j.min(body.len());
        let block_end = if closed { j + 1 } else { body.len() };
        let is_sql = info.eq_ignore_ascii_case("sql");
        let content = body[i + 1..content_end].join("\n");

        if is_sql && sql.is_none() && !content.trim().is_empty() {
            if !closed {
                warnings.push(ParseWarning::UnterminatedFence { step });
            }
            sql = Some(content);
        } else {
            if is_sql {
                warnings.push(if content.trim().is_empty() {
                    ParseWarning::EmptySqlBlock { step }
                } else {
                    ParseWarning::ExtraSqlBlock { step }
                });
            }
            if !closed {
                warnings.push(ParseWarning::UnterminatedFence { step });
            }
            let target = if sql.is_some() { &mut after } else { &mut before };
            target.extend_from_slice(&body[i..block_end]);
        }
        i = block_end;
    }
    BodySplit {
        before: before.join("\n").trim().to_string(),
        sql,
        after: after.join("\n").trim().to_string(),
    }
}

/// Returns `(backtick count, info string)` for a fence-opening line.
fn opens_fence(line: &str) -> Option<(usize, &str)> {
    let t = line.trim_start();
    let width = t.bytes().take_while(|&b| b == b'`').count();
    if width < 3 {
        return None;
    }
    let info = t[width..].trim();
    if info.contains('`') {
        return None;
    }
    Some((width, info))
}

fn closes_fence(line: &str, width: usize) -> bool {
    let t = line.trim();
    let n = t.bytes().take_while(|&b| b == b'`').count();
    n >= width && n == t.len()
}

fn is_underline(line: &str) -> bool {
    let t = line.trim();
    t.len() >= 2 && (t.bytes().all(|b| b == b'-') || t.bytes().all(|b| b == b'='))
}

/// Recognizes `**Step N: title**`, `**Step N:** title` and the same forms
/// behind a `#` heading marker.
fn parse_heading(line: &str) -> Option<(u32, String)> {
    let mut t = line.trim();
    t = t.trim_start_matches('#').trim_start();
    let bold = t.starts_with("**");
    if bold {
        t = &t[2..];
    }
    let rest = t.strip_prefix("Step").or_else(|| t.strip_prefix("STEP"))?;
    let rest = rest.trim_start();
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 6 {
        return None;
    }
    let n: u32 = rest[..digits].parse().ok()?;
    let mut rest = rest[digits..].trim_start();
    // `**Step N**: title`
    if bold {
        if let Some(r) = rest.strip_prefix("**") {
            rest = r.trim_start();
            let title = rest.strip_prefix(':')?.trim();
            return Some((n, title.to_string()));
        }
    }
    let rest = rest.strip_prefix(':')?;
    let title = if bold {
        match rest.find("**") {
            // `**Step N:** title` or `**Step N: title**`
            Some(0) => rest[2..].trim(),
            Some(pos) if rest[pos + 2..].trim().is_empty() => rest[..pos].trim(),
            _ => return None,
        }
    } else {
        rest.trim()
    };
    Some((n, title.to_string()))
}

/// Renders the canonical Markdown form after checking invariants and that
/// every text field survives a reparse unchanged.
pub fn serialize_cot(cot: &CotRationale) -> Result<String, CotError> {
    cot.validate()?;
    for step in &cot.steps {
        check_field(step.index, "title", &step.title, FieldKind::Title)?;
        check_field(step.index, "prose", &step.prose, FieldKind::Prose)?;
        check_field(step.index, "notes", &step.notes, FieldKind::Text)?;
        if let Some(sql) = &step.sql {
            check_field(step.index, "sql", sql, FieldKind::Sql)?;
        }
    }
    if let Some(trailer) = &cot.trailer {
        let last = cot.steps.len() as u32;
        check_field(last, "trailer", trailer, FieldKind::Text)?;
        if trailer.is_empty() {
            return Err(CotError::InvalidText {
                step: last,
                message: "trailer is present but empty".into(),
            });
        }
    }
    Ok(render(cot))
}

fn render(cot: &CotRationale) -> String {
    let mut out = String::new();
    for (i, step) in cot.steps.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("**Step {}: {}**\n--\n", step.index, step.title));
        if !step.prose.is_empty() {
            out.push_str(&format!("\n{}\n", step.prose));
        }
        if let Some(sql) = &step.sql {
            out.push_str(&format!("\n```sql\n{sql}\n```\n"));
        }
        if !step.notes.is_empty() {
            out.push_str(&format!("\n{}\n", step.notes));
        }
    }
    if let Some(trailer) = &cot.trailer {
        out.push_str(&format!("\n{trailer}\n"));
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum FieldKind {
    Title,
    Prose,
    Text,
    Sql,
}

fn check_field(step: u32, name: &str, value: &str, kind: FieldKind) -> Result<(), CotError> {
    let bad = |message: String| CotError::InvalidText {
        step,
        message: format!("{name}: {message}"),
    };
    match kind {
        FieldKind::Title => {
            if value.contains('\n') || value.contains("**") || value.trim() != value {
                return Err(bad("title must be a single trimmed line without `**`".into()));
            }
            return Ok(());
        }
        FieldKind::Sql => {
            if value.lines().any(|l| opens_fence(l).is_some() || closes_fence(l, 3)) {
                return Err(bad("sql must not contain fence lines".into()));
            }
            return Ok(());
        }
        FieldKind::Prose | FieldKind::Text => {}
    }
    if value.trim() != value {
        return Err(bad("must not have leading or trailing whitespace".into()));
    }
    let mut fence: Option<usize> = None;
    for line in value.lines() {
        if let Some(width) = fence {
            if closes_fence(line, width) {
                fence = None;
            }
            continue;
        }
        if let Some((width, info)) = opens_fence(line) {
            if kind == FieldKind::Prose && info.eq_ignore_ascii_case("sql") {
                return Err(bad("prose must not contain a sql fence".into()));
            }
            fence = Some(width);
            continue;
        }
        if parse_heading(line).is_some() {
            return Err(bad(format!("line `{line}` would parse as a step heading")));
        }
    }
    if fence.is_some() {
        return Err(bad("unterminated fence".into()));
    }
    Ok(())
}
