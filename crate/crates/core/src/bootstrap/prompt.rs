//! Prompt assembly for the teacher and the rationalization model.

use crate::corpus::TrainInstance;

pub const RATIONALE_INSTRUCTION: &str = include_str!("../../templates/rationale_instruction.txt");
pub const RATIONALIZATION_INSTRUCTION: &str = include_str!("../../templates/rationalization_instruction.txt");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("instance `{0}` has no schema text and no fallback schema was rendered")]
    EmptySchema(String),
}

/// A validated rationale shown to the teacher together with its source block.
#[derive(Debug, Clone, Copy)]
pub struct PromptExemplar<'a> {
    pub instance: &'a TrainInstance,
    pub cot_markdown: &'a str,
}

/// Appends evidence to the schema's `Note:` section, creating it if needed.
pub fn schema_with_evidence(schema: &str, evidence: Option<&str>) -> String {
    let schema = schema.trim_end();
    let Some(evidence) = evidence.map(str::trim).filter(|e| !e.is_empty()) else {
        return schema.to_string();
    };
    if schema.lines().any(|l| l.trim() == "Note:") {
        format!("{schema}\n{evidence}")
    } else if schema.is_empty() {
        format!("Note:\n{evidence}")
    } else {
        format!("{schema}\n\nNote:\n{evidence}")
    }
}

fn source_block(instance: &TrainInstance, gold_sql: Option<&str>, instruction: &str) -> Result<String, PromptError> {
    if instance.schema_text.trim().is_empty() {
        return Err(PromptError::EmptySchema(instance.instance_id.clone()));
    }
    let schema = schema_with_evidence(&instance.schema_text, instance.evidence.as_deref());
    let mut out = format!(
        "[SCHEMA]\n{schema}\n[/SCHEMA]\n\n[QUESTION]\n{}\n[/QUESTION]\n\n",
        instance.question.trim()
    );
    if let Some(sql) = gold_sql {
        out.push_str(&format!("[SQL]\n{}\n[/SQL]\n\n", sql.trim()));
    }
    out.push_str(instruction);
    Ok(out)
}

/// Teacher prompt: each exemplar's source block followed by its rationale,
/// then the target instance's source block.
pub fn build_prompt(instance: &TrainInstance, exemplars: &[PromptExemplar<'_>]) -> Result<String, PromptError> {
    let mut blocks = Vec::with_capacity(exemplars.len() + 1);
    for ex in exemplars {
        let source = source_block(ex.instance, None, RATIONALE_INSTRUCTION)?;
        blocks.push(format!("{source}\n\n{}", ex.cot_markdown.trim_end()));
    }
    blocks.push(source_block(instance, None, RATIONALE_INSTRUCTION)?);
    let mut prompt = blocks.join("\n\n");
    prompt.push('\n');
    Ok(prompt)
}

/// Answer-aware prompt: the gold SQL is given in a `[SQL]` block.
pub fn build_rationalization_prompt(instance: &TrainInstance) -> Result<String, PromptError> {
    let mut prompt = source_block(instance, Some(&instance.gold_sql), RATIONALIZATION_INSTRUCTION)?;
    prompt.push('\n');
    Ok(prompt)
}

/// A prompt split back into its parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    /// `(question, rationale markdown)` per exemplar, in prompt order.
    pub exemplars: Vec<(String, String)>,
    pub question: String,
    pub gold_sql: Option<String>,
}

fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<(&'a str, usize)> {
    let start = text.find(open)? + open.len();
    let end = start + text[start..].find(close)?;
    Some((text[start..end].trim(), end + close.len()))
}

/// Recovers exemplars and the target question from a prompt produced by
/// [`build_prompt`] or [`build_rationalization_prompt`].
pub fn parse_prompt(prompt: &str) -> Option<ParsedPrompt> {
    let mut blocks: Vec<&str> = Vec::new();
    let mut starts: Vec<usize> = Vec::new();
    let mut offset = 0;
    for line in prompt.split_inclusive('\n') {
        if line.trim_end() == "[SCHEMA]" {
            starts.push(offset);
        }
        offset += line.len();
    }
    for (i, &s) in starts.iter().enumerate() {
        let e = starts.get(i + 1).copied().unwrap_or(prompt.len());
        blocks.push(&prompt[s..e]);
    }
    let (target, shots) = blocks.split_last()?;
    let mut exemplars = Vec::new();
    for block in shots {
        let (question, _) = between(block, "[QUESTION]", "[/QUESTION]")?;
        let pos = block.find(RATIONALE_INSTRUCTION)? + RATIONALE_INSTRUCTION.len();
        exemplars.push((question.to_string(), block[pos..].trim().to_string()));
    }
    let (question, rest) = between(target, "[QUESTION]", "[/QUESTION]")?;
    let gold_sql = between(&target[rest..], "[SQL]", "[/SQL]").map(|(s, _)| s.to_string());
    Some(ParsedPrompt {
        exemplars,
        question: question.to_string(),
        gold_sql,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Difficulty;

    const WORKED_PROMPT: &str = include_str!("../../fixtures/worked_prompt.txt");

    fn worked_instance() -> TrainInstance {
        let schema = WORKED_PROMPT
            .split("[SCHEMA]\n")
            .nth(1)
            .unwrap()
            .split("\n[/SCHEMA]")
            .next()
            .unwrap();
        TrainInstance {
            instance_id: "worked".into(),
            db_id: "college".into(),
            question: "Among professors with the highest popularity, how many of their students have research capability of 5?".into(),
            gold_sql: "SELECT 1".into(),
            schema_text: schema.into(),
            difficulty: Difficulty::Moderate,
            evidence: None,
        }
    }

    #[test]
    fn zero_exemplars_reproduce_source_layout() {
        let prompt = build_prompt(&worked_instance(), &[]).unwrap();
        assert_eq!(prompt, WORKED_PROMPT);
    }

    #[test]
    fn exemplars_precede_target_and_are_deterministic() {
        let target = worked_instance();
        let mut other = worked_instance();
        other.instance_id = "other".into();
        other.question = "Other question?".into();
        let cot = "**Step 1: Plan**\n--\n\nx\n\n**Step 2: Do**\n--\n\n```sql\nSELECT 2\n```\n";
        let ex = [PromptExemplar {
            instance: &other,
            cot_markdown: cot,
        }];
        let prompt = build_prompt(&target, &ex).unwrap();
        let first_q = prompt.find("Other question?").unwrap();
        let cot_pos = prompt.find("**Step 1: Plan**").unwrap();
        let target_q = prompt.find("Among professors").unwrap();
        assert!(first_q < cot_pos && cot_pos < target_q);
        assert_eq!(prompt, build_prompt(&target, &ex).unwrap());

        let parsed = parse_prompt(&prompt).unwrap();
        assert_eq!(parsed.exemplars, vec![("Other question?".to_string(), cot.trim_end().to_string())]);
        assert_eq!(parsed.question, target.question);
        assert_eq!(parsed.gold_sql, None);
    }

    #[test]
    fn evidence_goes_into_note_section() {
        let mut inst = worked_instance();
        inst.evidence = Some("popularity refers to MAX(popularity)".into());
        let prompt = build_prompt(&inst, &[]).unwrap();
        assert!(prompt.contains("capability = 5\npopularity refers to MAX(popularity)\n[/SCHEMA]"));

        assert_eq!(schema_with_evidence("CREATE TABLE t (a);", Some("hint")), "CREATE TABLE t (a);\n\nNote:\nhint");
        assert_eq!(schema_with_evidence("x", Some("  ")), "x");
    }

    #[test]
    fn empty_schema_is_an_error() {
        let mut inst = worked_instance();
        inst.schema_text.clear();
        assert_eq!(build_prompt(&inst, &[]), Err(PromptError::EmptySchema("worked".into())));
    }

    #[test]
    fn rationalization_prompt_carries_gold() {
        let mut inst = worked_instance();
        inst.gold_sql = "SELECT COUNT(*) FROM ra".into();
        let prompt = build_rationalization_prompt(&inst).unwrap();
        assert!(prompt.contains("[/QUESTION]\n\n[SQL]\nSELECT COUNT(*) FROM ra\n[/SQL]\n\n"));
        assert!(prompt.ends_with(&format!("{RATIONALIZATION_INSTRUCTION}\n")));
        assert_eq!(parse_prompt(&prompt).unwrap().gold_sql.as_deref(), Some("SELECT COUNT(*) FROM ra"));
    }
}
