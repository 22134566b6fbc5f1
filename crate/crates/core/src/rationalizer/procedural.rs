//! Deterministic clause-peeling rationales.
//!
//! The gold statement is cut at top-level clause keywords and rebuilt one
//! clause group at a time. Each intermediate statement is executed and
//! dropped if it fails, so every emitted step runs. The last step is always
//! the gold statement verbatim.

use std::collections::BTreeSet;

use crate::corpus::TrainInstance;
use crate::execval::{ExecError, Session};
use crate::rationale::{CotRationale, CotStep};
use crate::registry::DatabaseRegistry;
use crate::sqllex::{lex, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Clause {
    Select,
    From,
    Where,
    GroupBy,
    Having,
    OrderBy,
    Limit,
}

#[derive(Debug)]
struct Segments<'a> {
    select: &'a str,
    /// Base table expression, before the first explicit join.
    base: &'a str,
    joins: Vec<&'a str>,
    where_: Option<&'a str>,
    group_by: Option<&'a str>,
    having: Option<&'a str>,
    order_by: Option<&'a str>,
    limit: Option<&'a str>,
    tables: Vec<String>,
    aggregated: bool,
}

fn word_at(tokens: &[Token], sql: &str, i: usize, w: &str) -> bool {
    tokens.get(i).is_some_and(|t| t.is_word(sql, w)) && (i == 0 || tokens[i - 1].kind != TokenKind::Dot)
}

const JOIN_PREFIX: [&str; 6] = ["NATURAL", "LEFT", "RIGHT", "FULL", "INNER", "CROSS"];

/// Cuts a plain `SELECT ... FROM ...` statement into clause slices. Returns
/// `None` for shapes the peeler does not handle.
fn segment(sql: &str) -> Option<Segments<'_>> {
    let lexed = lex(sql);
    if !lexed.warnings.is_empty() {
        return None;
    }
    let mut tokens = lexed.tokens;
    while tokens.last().is_some_and(|t| t.kind == TokenKind::Semicolon) {
        tokens.pop();
    }
    if tokens.iter().any(|t| t.kind == TokenKind::Semicolon) || !tokens.first()?.is_word(sql, "SELECT") {
        return None;
    }
    let end = tokens.last()?.span.end;

    let mut marks: Vec<(Clause, usize, usize)> = Vec::new(); // clause, keyword start, body start
    let mut joins_at: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        if t.depth != 0 || t.kind != TokenKind::Word || (i > 0 && tokens[i - 1].kind == TokenKind::Dot) {
            i += 1;
            continue;
        }
        let upper = t.text(sql).to_ascii_uppercase();
        let two = |second: &str| word_at(&tokens, sql, i + 1, second);
        let found = match upper.as_str() {
            "UNION" | "INTERSECT" | "EXCEPT" | "WINDOW" | "VALUES" => return None,
            "SELECT" if i == 0 => Some((Clause::Select, 1)),
            "FROM" => Some((Clause::From, 1)),
            "WHERE" => Some((Clause::Where, 1)),
            "GROUP" if two("BY") => Some((Clause::GroupBy, 2)),
            "HAVING" => Some((Clause::Having, 1)),
            "ORDER" if two("BY") => Some((Clause::OrderBy, 2)),
            "LIMIT" => Some((Clause::Limit, 1)),
            _ => None,
        };
        if let Some((clause, width)) = found {
            if marks.iter().any(|(c, _, _)| *c >= clause) {
                return None;
            }
            let body = tokens.get(i + width).map_or(end, |n| n.span.start);
            marks.push((clause, t.span.start, body));
            i += width;
            continue;
        }
        if upper == "JOIN" && marks.last().is_some_and(|(c, _, _)| *c == Clause::From) {
            let mut j = i;
            while j > 0 {
                let p = &tokens[j - 1];
                let pu = p.text(sql).to_ascii_uppercase();
                if p.kind == TokenKind::Word && (JOIN_PREFIX.contains(&pu.as_str()) || pu == "OUTER") {
                    j -= 1;
                } else {
                    break;
                }
            }
            joins_at.push(tokens[j].span.start);
        }
        i += 1;
    }

    let slice = |clause: Clause| -> Option<&str> {
        let pos = marks.iter().position(|(c, _, _)| *c == clause)?;
        let stop = marks.get(pos + 1).map_or(end, |(_, k, _)| *k);
        Some(sql[marks[pos].2..stop].trim())
    };
    let from_kw = marks.iter().find(|(c, _, _)| *c == Clause::From)?;
    let from_stop = marks
        .iter()
        .find(|(c, _, _)| *c > Clause::From)
        .map_or(end, |(_, k, _)| *k);
    let from_body = from_kw.2;
    let base_stop = joins_at.first().copied().unwrap_or(from_stop);
    let base = sql[from_body..base_stop].trim();
    let joins: Vec<&str> = joins_at
        .iter()
        .enumerate()
        .map(|(k, &s)| sql[s..joins_at.get(k + 1).copied().unwrap_or(from_stop)].trim())
        .collect();
    if base.is_empty() {
        return None;
    }

    let select = slice(Clause::Select)?;
    let aggregated = {
        let sel_start = marks[0].2;
        let sel_end = from_kw.1;
        tokens.iter().enumerate().any(|(k, t)| {
            t.depth == 0
                && t.span.start >= sel_start
                && t.span.end <= sel_end
                && t.kind == TokenKind::Word
                && ["COUNT", "SUM", "AVG", "MIN", "MAX", "TOTAL", "GROUP_CONCAT"]
                    .iter()
                    .any(|a| t.is_word(sql, a))
                && tokens.get(k + 1).is_some_and(|n| n.kind == TokenKind::LParen)
        })
    };

    let mut tables = Vec::new();
    for (k, t) in tokens.iter().enumerate() {
        if (t.is_word(sql, "FROM") || t.is_word(sql, "JOIN")) && (k == 0 || tokens[k - 1].kind != TokenKind::Dot) {
            if let Some(n) = tokens.get(k + 1) {
                if matches!(n.kind, TokenKind::Word | TokenKind::QuotedIdent) && !n.is_word(sql, "SELECT") {
                    let name = n.text(sql).trim_matches(|c| matches!(c, '"' | '`' | '[' | ']')).to_string();
                    if !tables.contains(&name) {
                        tables.push(name);
                    }
                }
            }
        }
    }

    Some(Segments {
        select,
        base,
        joins,
        where_: slice(Clause::Where),
        group_by: slice(Clause::GroupBy),
        having: slice(Clause::Having),
        order_by: slice(Clause::OrderBy),
        limit: slice(Clause::Limit),
        tables,
        aggregated,
    })
}

fn normalize(sql: &str) -> String {
    sql.split_whitespace().collect::<Vec<_>>().join(" ").trim_end_matches(';').trim().to_string()
}

fn plan_step(tables: &[String]) -> CotStep {
    let prose = if tables.is_empty() {
        "The question can be answered with a single statement.".to_string()
    } else {
        let list: Vec<String> = tables.iter().map(|t| format!("`{t}`")).collect();
        format!("The question needs data from the following tables: {}.", list.join(", "))
    };
    CotStep {
        index: 1,
        title: "Identify the required tables and columns".into(),
        prose,
        sql: None,
        notes: String::new(),
    }
}

fn sql_step(index: u32, title: &str, prose: &str, sql: String) -> CotStep {
    CotStep {
        index,
        title: title.into(),
        prose: prose.into(),
        sql: Some(sql),
        notes: String::new(),
    }
}

fn fallback(gold: &str, tables: Vec<String>) -> CotRationale {
    CotRationale {
        steps: vec![
            plan_step(&tables),
            sql_step(2, "Write the final query", "Combine everything into the final statement.", gold.to_string()),
        ],
        trailer: None,
    }
}

fn referenced_tables(sql: &str) -> Vec<String> {
    let tokens = lex(sql).tokens;
    let mut out: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, t) in tokens.iter().enumerate() {
        if t.is_word(sql, "FROM") || t.is_word(sql, "JOIN") {
            if let Some(n) = tokens.get(k + 1).filter(|n| n.kind == TokenKind::Word && !n.is_word(sql, "SELECT")) {
                let name = n.text(sql).to_string();
                if seen.insert(name.to_ascii_lowercase()) {
                    out.push(name);
                }
            }
        }
    }
    out
}

/// Builds a rationale for `instance` by peeling its gold SQL, executing
/// candidate steps in `session`.
pub fn procedural_rationalize_in(session: &Session, instance: &TrainInstance) -> CotRationale {
    let gold = instance.gold_sql.trim().trim_end_matches(';').trim_end();
    let Some(seg) = segment(gold) else {
        tracing::warn!(instance = %instance.instance_id, "clause peeler cannot segment gold SQL; using two-step rationale");
        return fallback(gold, referenced_tables(gold));
    };

    let row_proj = if seg.aggregated || seg.group_by.is_some() { "*" } else { seg.select };
    let core = |n_joins: usize| {
        let mut s = format!("FROM {}", seg.base);
        for j in &seg.joins[..n_joins] {
            s.push(' ');
            s.push_str(j);
        }
        s
    };
    let full_from = core(seg.joins.len());
    let with_where = match seg.where_ {
        Some(w) => format!("{full_from} WHERE {w}"),
        None => full_from.clone(),
    };
    let mut grouped = with_where.clone();
    if let Some(g) = seg.group_by {
        grouped.push_str(&format!(" GROUP BY {g}"));
    }
    if let Some(h) = seg.having {
        grouped.push_str(&format!(" HAVING {h}"));
    }

    let mut candidates: Vec<(&str, &str, Vec<String>)> = vec![(
        "Select rows from the main table",
        "Start from the main table and look at its rows.",
        vec![format!("SELECT {row_proj} FROM {}", seg.base), format!("SELECT * FROM {}", seg.base)],
    )];
    if !seg.joins.is_empty() {
        candidates.push((
            "Join the related tables",
            "Bring in the related tables through their join conditions.",
            vec![format!("SELECT {row_proj} {full_from}"), format!("SELECT * {full_from}")],
        ));
    }
    if seg.where_.is_some() {
        candidates.push((
            "Apply the filter conditions",
            "Keep only the rows that satisfy the conditions of the question.",
            vec![format!("SELECT {row_proj} {with_where}"), format!("SELECT * {with_where}")],
        ));
    }
    if seg.aggregated || seg.group_by.is_some() {
        let title = if seg.group_by.is_some() { "Group and aggregate" } else { "Aggregate the result" };
        candidates.push((
            title,
            "Compute the requested values over the selected rows.",
            vec![format!("SELECT {} {grouped}", seg.select)],
        ));
    }

    let final_norm = normalize(gold);
    let mut steps = vec![plan_step(&seg.tables)];
    let mut last_norm = String::new();
    for (title, prose, options) in candidates {
        let chosen = options
            .into_iter()
            .find(|sql| session.check(sql).is_ok());
        let Some(sql) = chosen else { continue };
        let norm = normalize(&sql);
        if norm == final_norm || norm == last_norm {
            continue;
        }
        last_norm = norm;
        steps.push(sql_step(steps.len() as u32 + 1, title, prose, sql));
    }
    let has_order_limit = seg.order_by.is_some() || seg.limit.is_some();
    let final_title = if has_order_limit { "Order and limit the result" } else { "Write the final query" };
    let final_prose = if has_order_limit {
        "Sort the rows as requested and keep the requested number of them."
    } else {
        "Combine everything into the final statement."
    };
    steps.push(sql_step(steps.len() as u32 + 1, final_title, final_prose, gold.to_string()));
    CotRationale { steps, trailer: None }
}

/// Opens the instance's database and calls [`procedural_rationalize_in`].
pub fn procedural_rationalize(instance: &TrainInstance, registry: &DatabaseRegistry) -> Result<CotRationale, ExecError> {
    let session = Session::open(registry, &instance.db_id)?;
    Ok(procedural_rationalize_in(&session, instance))
}
