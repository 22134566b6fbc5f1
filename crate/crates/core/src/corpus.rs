//! Text-to-SQL corpora: loading, cleaning and fallback schema rendering.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rusqlite::types::ValueRef;
use serde::{Deserialize, Serialize};

use crate::execval::{ExecError, Session};
use crate::jsonl::{self, JsonlError};
use crate::parallel;
pub use crate::registry::{DatabaseEntry, DatabaseRegistry};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Simple,
    Moderate,
    Challenging,
    #[default]
    Unknown,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [
        Difficulty::Simple,
        Difficulty::Moderate,
        Difficulty::Challenging,
        Difficulty::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Simple => "simple",
            Difficulty::Moderate => "moderate",
            Difficulty::Challenging => "challenging",
            Difficulty::Unknown => "unknown",
        }
    }

    fn from_label(s: &str) -> Difficulty {
        match s.trim().to_ascii_lowercase().as_str() {
            "simple" => Difficulty::Simple,
            "moderate" => Difficulty::Moderate,
            "challenging" | "challenge" => Difficulty::Challenging,
            _ => Difficulty::Unknown,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One (question, gold SQL) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainInstance {
    pub instance_id: String,
    pub db_id: String,
    pub question: String,
    pub gold_sql: String,
    /// Pre-rendered schema; empty means "use the fallback renderer".
    #[serde(default)]
    pub schema_text: String,
    #[serde(default)]
    pub difficulty: Difficulty,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    BirdJson,
    GenericJsonl,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bird_json" | "bird" => Ok(CorpusFormat::BirdJson),
            "generic_jsonl" | "jsonl" => Ok(CorpusFormat::GenericJsonl),
            other => Err(format!("unknown corpus format `{other}` (expected bird_json or generic_jsonl)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record {index}: {message}")]
    Malformed { index: usize, message: String },
    #[error("duplicate instance_id `{id}` at record {index}")]
    DuplicateId { id: String, index: usize },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

#[derive(Deserialize)]
struct BirdRecord {
    #[serde(default)]
    question_id: Option<serde_json::Value>,
    db_id: String,
    question: String,
    #[serde(default)]
    evidence: Option<String>,
    #[serde(alias = "sql", alias = "query")]
    #[serde(rename = "SQL")]
    sql: String,
    #[serde(default)]
    difficulty: Option<String>,
}

impl BirdRecord {
    fn into_instance(self, index: usize) -> TrainInstance {
        let instance_id = match self.question_id {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => index.to_string(),
        };
        TrainInstance {
            instance_id,
            db_id: self.db_id,
            question: self.question,
            gold_sql: self.sql,
            schema_text: String::new(),
            difficulty: self.difficulty.as_deref().map_or(Difficulty::Unknown, Difficulty::from_label),
            evidence: self.evidence.filter(|e| !e.trim().is_empty()),
        }
    }
}

/// Loads a corpus in file order.
///
/// BIRD files are a JSON array of `{question_id?, db_id, question, evidence,
/// SQL, difficulty?}`; records without `question_id` are numbered by
/// position. Generic JSONL holds one [`TrainInstance`] object per line.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<TrainInstance>, CorpusError> {
    let instances = match format {
        CorpusFormat::BirdJson => {
            let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let raw: Vec<serde_json::Value> = serde_json::from_str(&text).map_err(|e| CorpusError::Malformed {
                index: 0,
                message: format!("not a JSON array of records: {e}"),
            })?;
            raw.into_iter()
                .enumerate()
                .map(|(index, value)| {
                    serde_json::from_value::<BirdRecord>(value)
                        .map(|r| r.into_instance(index))
                        .map_err(|e| CorpusError::Malformed {
                            index,
                            message: e.to_string(),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        CorpusFormat::GenericJsonl => match jsonl::read_all::<TrainInstance>(path) {
            Ok(v) => v,
            Err(JsonlError::Record { index, line, source, .. }) => {
                return Err(CorpusError::Malformed {
                    index,
                    message: format!("line {line}: {source}"),
                })
            }
            Err(JsonlError::Io { path, source }) => return Err(CorpusError::Io { path, source }),
            Err(e) => return Err(e.into()),
        },
    };
    let mut seen = HashSet::new();
    for (index, inst) in instances.iter().enumerate() {
        if !seen.insert(inst.instance_id.as_str()) {
            return Err(CorpusError::DuplicateId {
                id: inst.instance_id.clone(),
                index,
            });
        }
    }
    Ok(instances)
}

pub fn write_corpus(path: &Path, instances: &[TrainInstance]) -> Result<(), CorpusError> {
    Ok(jsonl::write_all(path, instances)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    SyntaxError,
    Timeout,
    EmptyResult,
    MissingDb,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub instance_id: String,
    pub reason: RejectReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub kept: usize,
    pub rejected: Vec<Rejection>,
}

impl CleaningReport {
    pub fn count(&self, reason: RejectReason) -> usize {
        self.rejected.iter().filter(|r| r.reason == reason).count()
    }
}

fn check_gold(sessions: &mut HashMap<String, Option<Session>>, inst: &TrainInstance, registry: &DatabaseRegistry) -> Option<Rejection> {
    let reject = |reason, message: Option<String>| {
        Some(Rejection {
            instance_id: inst.instance_id.clone(),
            reason,
            message,
        })
    };
    let session = sessions
        .entry(inst.db_id.clone())
        .or_insert_with(|| Session::open(registry, &inst.db_id).ok());
    let Some(session) = session else {
        return reject(RejectReason::MissingDb, Some(format!("database `{}` cannot be opened", inst.db_id)));
    };
    if inst.gold_sql.trim().is_empty() {
        return reject(RejectReason::SyntaxError, Some("empty gold SQL".into()));
    }
    match session.check(&inst.gold_sql) {
        Ok(0) => reject(RejectReason::EmptyResult, None),
        Ok(_) => None,
        Err(ExecError::Timeout(d)) => reject(RejectReason::Timeout, Some(format!("exceeded {d:?}"))),
        Err(e) => reject(RejectReason::SyntaxError, Some(e.to_string())),
    }
}

/// Drops instances whose gold SQL fails, times out or returns no rows.
/// Kept instances keep their input order; each rejection has one reason.
pub fn clean_corpus(instances: &[TrainInstance], registry: &DatabaseRegistry, workers: usize) -> (Vec<TrainInstance>, CleaningReport) {
    let verdicts: Vec<Option<Rejection>> = parallel::map_with_state(workers, instances, HashMap::new, |sessions, inst| {
        check_gold(sessions, inst, registry)
    });
    let mut kept = Vec::new();
    let mut report = CleaningReport::default();
    for (inst, verdict) in instances.iter().zip(verdicts) {
        match verdict {
            None => kept.push(inst.clone()),
            Some(r) => report.rejected.push(r),
        }
    }
    report.kept = kept.len();
    (kept, report)
}

/// Renders a schema description of a registered database: one `CREATE
/// TABLE` block per table (column comments are recovered from the stored
/// DDL when present) followed by up to `sample_rows` distinct non-NULL
/// sample values per column, in ascending order.
pub fn render_schema_fallback(db_id: &str, registry: &DatabaseRegistry, sample_rows: usize) -> Result<String, ExecError> {
    let session = Session::open(registry, db_id)?;
    let conn = session.connection();
    let sql_err = |e: rusqlite::Error| ExecError::Sql(e.to_string());

    let mut stmt = conn
        .prepare("SELECT name, COALESCE(sql, '') FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid")
        .map_err(sql_err)?;
    let tables: Vec<(String, String)> = stmt
        .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))
        .map_err(sql_err)?
        .collect::<Result<_, _>>()
        .map_err(sql_err)?;

    let mut blocks = Vec::new();
    for (table, ddl) in tables {
        let comments = column_comments(&ddl);
        let mut cols = conn
            .prepare(&format!("PRAGMA table_info({})", quote_ident(&table)))
            .map_err(sql_err)?;
        let columns: Vec<(String, String, i64)> = cols
            .query_map([], |r| Ok((r.get(1)?, r.get(2)?, r.get(5)?)))
            .map_err(sql_err)?
            .collect::<Result<_, _>>()
            .map_err(sql_err)?;
        let pk_count = columns.iter().filter(|c| c.2 > 0).count();

        let mut fks = conn
            .prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(&table)))
            .map_err(sql_err)?;
        let foreign: Vec<(String, String, Option<String>)> = fks
            .query_map([], |r| Ok((r.get(3)?, r.get(2)?, r.get(4)?)))
            .map_err(sql_err)?
            .collect::<Result<_, _>>()
            .map_err(sql_err)?;

        let mut ddl_out = format!("CREATE TABLE {} (\n", display_ident(&table));
        for (name, ty, pk) in &columns {
            let mut line = format!(" {}", display_ident(name));
            if !ty.is_empty() {
                line.push(' ');
                line.push_str(ty);
            }
            if *pk > 0 && pk_count == 1 {
                line.push_str(" PRIMARY KEY");
            }
            line.push(',');
            if let Some(c) = comments.get(&name.to_ascii_lowercase()) {
                line.push_str(" -- ");
                line.push_str(c);
            }
            ddl_out.push_str(&line);
            ddl_out.push('\n');
        }
        if pk_count > 1 {
            let mut pks: Vec<&(String, String, i64)> = columns.iter().filter(|c| c.2 > 0).collect();
            pks.sort_by_key(|c| c.2);
            let names: Vec<String> = pks.iter().map(|c| display_ident(&c.0)).collect();
            ddl_out.push_str(&format!(" PRIMARY KEY({}),\n", names.join(", ")));
        }
        for (from, target, to) in &foreign {
            let to = to.clone().unwrap_or_else(|| from.clone());
            ddl_out.push_str(&format!(
                " FOREIGN KEY({}) REFERENCES {}({})\n",
                display_ident(from),
                display_ident(target),
                display_ident(&to)
            ));
        }
        ddl_out.push_str(");");

        let mut samples = Vec::new();
        for (name, _, _) in &columns {
            let values = if sample_rows == 0 {
                Vec::new()
            } else {
                sample_values(conn, &table, name, sample_rows).map_err(sql_err)?
            };
            if values.is_empty() {
                samples.push(format!("{table}.{name}"));
            } else {
                samples.push(format!("{table}.{name}: {}", values.join(", ")));
            }
        }
        blocks.push(format!("{ddl_out}\n\n{}", samples.join("\n")));
    }
    Ok(blocks.join("\n\n"))
}

fn sample_values(conn: &rusqlite::Connection, table: &str, column: &str, limit: usize) -> rusqlite::Result<Vec<String>> {
    let col = quote_ident(column);
    let sql = format!(
        "SELECT DISTINCT {col} FROM {} WHERE {col} IS NOT NULL ORDER BY {col} LIMIT {limit}",
        quote_ident(table)
    );
    let mut stmt = conn.prepare(&sql)?;
    let mut rows = stmt.query([])?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        match row.get_ref(0)? {
            ValueRef::Integer(i) => out.push(i.to_string()),
            ValueRef::Real(r) => out.push(r.to_string()),
            ValueRef::Text(t) => {
                let s = String::from_utf8_lossy(t);
                let s: String = s.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
                out.push(format!("'{}'", s.replace('\'', "''")));
            }
            ValueRef::Blob(_) | ValueRef::Null => {}
        }
    }
    Ok(out)
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn display_ident(name: &str) -> String {
    let plain = !name.is_empty()
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
        && !name.as_bytes()[0].is_ascii_digit();
    if plain {
        name.to_string()
    } else {
        format!("`{}`", name.replace('`', "``"))
    }
}

/// Maps lowercase column name to its trailing `-- comment` in the DDL.
fn column_comments(ddl: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for line in ddl.lines() {
        let Some(pos) = line.find("--") else { continue };
        let (def, comment) = (line[..pos].trim(), line[pos + 2..].trim());
        if comment.is_empty() {
            continue;
        }
        let def = def.trim_start_matches(['(', ',']).trim_start();
        let def = def
            .split_once('(')
            .filter(|(head, _)| head.trim().eq_ignore_ascii_case("CREATE TABLE") || head.to_ascii_uppercase().starts_with("CREATE TABLE"))
            .map_or(def, |(_, rest)| rest.trim_start());
        let name = first_ident(def);
        if let Some(name) = name {
            out.entry(name.to_ascii_lowercase()).or_insert_with(|| comment.to_string());
        }
    }
    out
}

fn first_ident(def: &str) -> Option<String> {
    let def = def.trim_start();
    let (open, close) = match def.chars().next()? {
        '"' => ('"', '"'),
        '`' => ('`', '`'),
        '[' => ('[', ']'),
        _ => {
            let name: String = def.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
            return (!name.is_empty()).then_some(name);
        }
    };
    let rest = &def[open.len_utf8()..];
    rest.find(close).map(|end| rest[..end].to_string())
}

/// Fills empty `schema_text` fields from the fallback renderer, rendering
/// each database once.
pub fn fill_missing_schemas(instances: &mut [TrainInstance], registry: &DatabaseRegistry, sample_rows: usize) -> Result<(), ExecError> {
    let mut cache: HashMap<String, String> = HashMap::new();
    for inst in instances.iter_mut().filter(|i| i.schema_text.trim().is_empty()) {
        if !cache.contains_key(&inst.db_id) {
            let text = render_schema_fallback(&inst.db_id, registry, sample_rows)?;
            cache.insert(inst.db_id.clone(), text);
        }
        inst.schema_text = cache[&inst.db_id].clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rusqlite::Connection;

    fn inst(id: &str, db: &str, sql: &str) -> TrainInstance {
        TrainInstance {
            instance_id: id.into(),
            db_id: db.into(),
            question: format!("question {id}"),
            gold_sql: sql.into(),
            schema_text: String::new(),
            difficulty: Difficulty::Unknown,
            evidence: None,
        }
    }

    fn prof_db() -> (tempfile::TempDir, DatabaseRegistry) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("college.sqlite");
        Connection::open(&path)
            .unwrap()
            .execute_batch(
                "CREATE TABLE prof (
                    prof_id INTEGER PRIMARY KEY, -- unique id for professors
                    first_name TEXT -- the first name of the professor
                 );
                 INSERT INTO prof VALUES (1, 'Mateo'), (2, 'Bernhard'), (3, 'Hattie'), (4, NULL);
                 CREATE TABLE ra (student_id INTEGER, prof_id INTEGER, FOREIGN KEY(prof_id) REFERENCES prof(prof_id));
                 INSERT INTO ra VALUES (10, 1);",
            )
            .unwrap();
        let reg = DatabaseRegistry::new().with_database("college", path);
        (dir, reg)
    }

    #[test]
    fn generic_jsonl_defaults_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            "{\"instance_id\":\"a\",\"db_id\":\"d\",\"question\":\"q\",\"gold_sql\":\"SELECT 1\"}\n\
             {\"instance_id\":\"b\",\"db_id\":\"d\",\"question\":\"q\",\"gold_sql\":\"SELECT 2\",\"difficulty\":\"moderate\",\"evidence\":\"e\"}\n",
        )
        .unwrap();
        let c = load_corpus(&path, CorpusFormat::GenericJsonl).unwrap();
        assert_eq!(c[0].difficulty, Difficulty::Unknown);
        assert_eq!(c[0].schema_text, "");
        assert_eq!(c[1].difficulty, Difficulty::Moderate);
        assert_eq!(c[1].evidence.as_deref(), Some("e"));

        std::fs::write(&path, "").unwrap();
        assert!(load_corpus(&path, CorpusFormat::GenericJsonl).unwrap().is_empty());

        std::fs::write(
            &path,
            "{\"instance_id\":\"a\",\"db_id\":\"d\",\"question\":\"q\",\"gold_sql\":\"x\"}\n{\"instance_id\":\"a\",\"db_id\":\"d\",\"question\":\"q\",\"gold_sql\":\"y\"}\n",
        )
        .unwrap();
        assert!(matches!(load_corpus(&path, CorpusFormat::GenericJsonl), Err(CorpusError::DuplicateId { index: 1, .. })));

        std::fs::write(&path, "{\"instance_id\":\"a\"}\n").unwrap();
        assert!(matches!(load_corpus(&path, CorpusFormat::GenericJsonl), Err(CorpusError::Malformed { index: 0, .. })));
    }

    #[test]
    fn bird_adapter_maps_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dev.json");
        std::fs::write(
            &path,
            r#"[{"question_id": 0, "db_id": "college", "question": "How many?", "evidence": "capability = 5", "SQL": "SELECT 1", "difficulty": "challenging"},
                {"db_id": "college", "question": "Q2", "evidence": "", "SQL": "SELECT 2"}]"#,
        )
        .unwrap();
        let c = load_corpus(&path, CorpusFormat::BirdJson).unwrap();
        assert_eq!(c[0].instance_id, "0");
        assert_eq!(c[0].difficulty, Difficulty::Challenging);
        assert_eq!(c[0].evidence.as_deref(), Some("capability = 5"));
        assert_eq!(c[1].instance_id, "1");
        assert_eq!(c[1].evidence, None);
        assert_eq!(c[1].gold_sql, "SELECT 2");

        std::fs::write(&path, r#"[{"db_id": "x"}]"#).unwrap();
        assert!(matches!(load_corpus(&path, CorpusFormat::BirdJson), Err(CorpusError::Malformed { index: 0, .. })));
    }

    #[test]
    fn cleaning_reasons() {
        let (_d, reg) = prof_db();
        let input = vec![
            inst("ok", "college", "SELECT first_name FROM prof"),
            inst("syntax", "college", "SELEC * FROM prof"),
            inst("empty", "college", "SELECT * FROM prof WHERE prof_id > 99"),
            inst("nullrow", "college", "SELECT MAX(prof_id) FROM ra WHERE 0"),
            inst("nodb", "elsewhere", "SELECT 1"),
            inst("blank", "college", "  "),
        ];
        let (kept, report) = clean_corpus(&input, &reg, 3);
        let kept_ids: Vec<&str> = kept.iter().map(|i| i.instance_id.as_str()).collect();
        assert_eq!(kept_ids, ["ok", "nullrow"]);
        assert_eq!(report.kept + report.rejected.len(), input.len());
        let reasons: Vec<(&str, RejectReason)> = report.rejected.iter().map(|r| (r.instance_id.as_str(), r.reason)).collect();
        assert_eq!(
            reasons,
            [
                ("syntax", RejectReason::SyntaxError),
                ("empty", RejectReason::EmptyResult),
                ("nodb", RejectReason::MissingDb),
                ("blank", RejectReason::SyntaxError)
            ]
        );
        let (again, second) = clean_corpus(&kept, &reg, 2);
        assert_eq!(again, kept);
        assert!(second.rejected.is_empty());
    }

    #[test]
    fn fallback_schema_layout() {
        let (_d, reg) = prof_db();
        let text = render_schema_fallback("college", &reg, 3).unwrap();
        let expected = "CREATE TABLE prof (\n prof_id INTEGER PRIMARY KEY, -- unique id for professors\n first_name TEXT, -- the first name of the professor\n);\n\n\
                        prof.prof_id: 1, 2, 3\nprof.first_name: 'Bernhard', 'Hattie', 'Mateo'\n\n\
                        CREATE TABLE ra (\n student_id INTEGER,\n prof_id INTEGER,\n FOREIGN KEY(prof_id) REFERENCES prof(prof_id)\n);\n\n\
                        ra.student_id: 10\nra.prof_id: 1";
        assert_eq!(text, expected);
        assert_eq!(render_schema_fallback("college", &reg, 3).unwrap(), text);
        assert!(render_schema_fallback("nope", &reg, 3).is_err());
    }

    #[test]
    fn fallback_schema_of_empty_database() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.sqlite");
        Connection::open(&path).unwrap().execute_batch("PRAGMA user_version = 1;").unwrap();
        let reg = DatabaseRegistry::new().with_database("e", path);
        assert_eq!(render_schema_fallback("e", &reg, 3).unwrap(), "");
    }

    #[test]
    fn provided_schema_wins() {
        let (_d, reg) = prof_db();
        let mut items = vec![inst("a", "college", "SELECT 1"), inst("b", "college", "SELECT 1")];
        items[0].schema_text = "given".into();
        fill_missing_schemas(&mut items, &reg, 2).unwrap();
        assert_eq!(items[0].schema_text, "given");
        assert!(items[1].schema_text.starts_with("CREATE TABLE prof"));
    }

    #[test]
    fn comment_extraction() {
        let c = column_comments("CREATE TABLE t (\n \"a b\" TEXT, -- spaced\n [c] INT -- bracketed\n, d INT\n)");
        assert_eq!(c.get("a b").map(String::as_str), Some("spaced"));
        assert_eq!(c.get("c").map(String::as_str), Some("bracketed"));
        assert!(!c.contains_key("d"));
    }
}
