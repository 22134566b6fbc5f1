//! Read-only SQL execution and execution-equivalence validation.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, ErrorCode, OpenFlags};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::TrainInstance;
use crate::rationale::CotRationale;
use crate::registry::{ComparisonMode, DatabaseRegistry};
use crate::sqllex::has_top_level_order_by;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("database `{0}` is not registered or its file does not exist")]
    MissingDatabase(String),
    #[error("cannot open database `{db_id}`: {message}")]
    Open { db_id: String, message: String },
    #[error("{0}")]
    Sql(String),
    #[error("query timed out after {0:?}")]
    Timeout(Duration),
    #[error("statement is not read-only")]
    WriteRejected,
    #[error("result set truncated at {0} rows; raise the row cap to compare")]
    Truncated(usize),
    #[error("gold SQL failed: {0}")]
    Gold(Box<ExecError>),
}

/// A canonical result value. Integral reals are stored as integers and blobs
/// as a SHA-256 digest of their content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(String),
}

impl Value {
    pub fn real(x: f64) -> Value {
        // i64::MAX as f64 rounds up to 2^63, which does not fit.
        if x.is_finite() && x.fract() == 0.0 && (-9.223_372_036_854_776e18..9.223_372_036_854_776e18).contains(&x) {
            Value::Integer(x as i64)
        } else {
            Value::Real(x)
        }
    }

    pub fn blob(bytes: &[u8]) -> Value {
        Value::Blob(hex::encode(Sha256::digest(bytes)))
    }

    fn from_ref(v: ValueRef<'_>) -> Value {
        match v {
            ValueRef::Null => Value::Null,
            ValueRef::Integer(i) => Value::Integer(i),
            ValueRef::Real(r) => Value::real(r),
            ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => Value::blob(b),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Integer(_) | Value::Real(_) => 1,
            Value::Text(_) => 2,
            Value::Blob(_) => 3,
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    /// Total order used to canonicalize row multisets.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Integer(a), Value::Integer(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.as_bytes().cmp(b.as_bytes()),
            (Value::Blob(a), Value::Blob(b)) => a.cmp(b),
            (a, b) if a.rank() == 1 && b.rank() == 1 => {
                let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
                x.total_cmp(&y).then_with(|| matches!(a, Value::Real(_)).cmp(&matches!(b, Value::Real(_))))
            }
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }

    pub fn equals(&self, other: &Value, epsilon: f64) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Integer(a), Value::Integer(b)) => a == b,
            (Value::Text(a), Value::Text(b)) => a == b,
            (Value::Blob(a), Value::Blob(b)) => a == b,
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => x == y || (x - y).abs() <= epsilon,
                _ => false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub column_count: usize,
    pub rows: Vec<Vec<Value>>,
    pub truncated: bool,
}

impl ResultTable {
    pub fn new(column_count: usize, rows: Vec<Vec<Value>>) -> Self {
        debug_assert!(rows.iter().all(|r| r.len() == column_count));
        Self {
            columns: Vec::new(),
            column_count,
            rows,
            truncated: false,
        }
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub order_sensitive: bool,
    pub epsilon: f64,
}

impl CompareOptions {
    pub fn multiset() -> Self {
        Self {
            order_sensitive: false,
            epsilon: 0.0,
        }
    }

    pub fn sequence() -> Self {
        Self {
            order_sensitive: true,
            epsilon: 0.0,
        }
    }
}

fn rows_cmp(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Exact result-set comparison: positional columns, rows as a multiset or,
/// when `order_sensitive`, as a sequence. NULL equals NULL.
pub fn compare_results(a: &ResultTable, b: &ResultTable, opts: CompareOptions) -> Result<bool, ExecError> {
    if a.truncated || b.truncated {
        return Err(ExecError::Truncated(a.rows.len().max(b.rows.len())));
    }
    if a.column_count != b.column_count || a.rows.len() != b.rows.len() {
        return Ok(false);
    }
    let row_eq = |x: &Vec<Value>, y: &Vec<Value>| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.equals(q, opts.epsilon));
    if opts.order_sensitive {
        return Ok(a.rows.iter().zip(&b.rows).all(|(x, y)| row_eq(x, y)));
    }
    let mut ra: Vec<&Vec<Value>> = a.rows.iter().collect();
    let mut rb: Vec<&Vec<Value>> = b.rows.iter().collect();
    ra.sort_by(|x, y| rows_cmp(x, y));
    rb.sort_by(|x, y| rows_cmp(x, y));
    Ok(ra.iter().zip(&rb).all(|(x, y)| row_eq(x, y)))
}

/// A read-only connection to one registered database.
pub struct Session {
    conn: Connection,
    timeout: Duration,
    row_cap: usize,
}

impl Session {
    pub fn open(registry: &DatabaseRegistry, db_id: &str) -> Result<Self, ExecError> {
        let entry = registry
            .get(db_id)
            .filter(|e| e.path.is_file())
            .ok_or_else(|| ExecError::MissingDatabase(db_id.to_string()))?;
        let conn = Connection::open_with_flags(
            &entry.path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
        )
        .map_err(|e| ExecError::Open {
            db_id: db_id.to_string(),
            message: e.to_string(),
        })?;
        Ok(Self {
            conn,
            timeout: registry.timeout_for(db_id),
            row_cap: registry.settings.row_cap,
        })
    }

    pub fn with_row_cap(mut self, row_cap: usize) -> Self {
        self.row_cap = row_cap;
        self
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }

    pub fn execute(&self, sql: &str) -> Result<ResultTable, ExecError> {
        self.run(sql, true)
    }

    /// Runs the statement to completion without keeping rows.
    pub fn check(&self, sql: &str) -> Result<usize, ExecError> {
        self.run(sql, false).map(|t| t.rows.len())
    }

    fn run(&self, sql: &str, keep: bool) -> Result<ResultTable, ExecError> {
        let deadline = Instant::now() + self.timeout;
        self.conn
            .progress_handler(1_000, Some(move || Instant::now() >= deadline));
        let result = self.run_inner(sql, keep);
        self.conn.progress_handler(1_000, None::<fn() -> bool>);
        result.map_err(|e| match e {
            ExecError::Sql(_) if Instant::now() >= deadline => ExecError::Timeout(self.timeout),
            other => other,
        })
    }

    fn run_inner(&self, sql: &str, keep: bool) -> Result<ResultTable, ExecError> {
        let mut stmt = self.conn.prepare(sql).map_err(map_sql_err)?;
        if !stmt.readonly() {
            return Err(ExecError::WriteRejected);
        }
        let column_count = stmt.column_count();
        let columns = stmt.column_names().into_iter().map(String::from).collect();
        let mut rows = stmt.raw_query();
        let mut out = Vec::new();
        let mut seen = 0usize;
        let mut truncated = false;
        while let Some(row) = rows.next().map_err(map_sql_err)? {
            if seen == self.row_cap {
                truncated = true;
                break;
            }
            seen += 1;
            if keep {
                let values = (0..column_count)
                    .map(|i| row.get_ref(i).map(Value::from_ref))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(map_sql_err)?;
                out.push(values);
            } else {
                out.push(Vec::new());
            }
        }
        Ok(ResultTable {
            columns,
            column_count,
            rows: out,
            truncated,
        })
    }
}

fn map_sql_err(e: rusqlite::Error) -> ExecError {
    match &e {
        rusqlite::Error::SqliteFailure(f, _) if f.code == ErrorCode::OperationInterrupted => {
            ExecError::Sql("interrupted".into())
        }
        rusqlite::Error::SqliteFailure(_, Some(msg)) => ExecError::Sql(msg.clone()),
        _ => ExecError::Sql(e.to_string()),
    }
}

/// Runs `sql` on a fresh read-only session.
pub fn execute(db_id: &str, sql: &str, registry: &DatabaseRegistry) -> Result<ResultTable, ExecError> {
    Session::open(registry, db_id)?.execute(sql)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictDetail {
    Match,
    ResultMismatch,
    FinalSqlError,
    FinalSqlTimeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Ok,
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepExecution {
    pub index: u32,
    pub status: StepStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchSummary {
    pub gold_columns: usize,
    pub gold_rows: usize,
    pub predicted_columns: usize,
    pub predicted_rows: usize,
    pub order_sensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub detail: VerdictDetail,
    pub step_execution: Vec<StepExecution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatch: Option<MismatchSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Verdict {
    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }

    fn new(detail: VerdictDetail) -> Self {
        Self {
            label: if detail == VerdictDetail::Match {
                Label::Positive
            } else {
                Label::Negative
            },
            detail,
            step_execution: Vec::new(),
            mismatch: None,
            error: None,
        }
    }

    pub fn failed_steps(&self) -> impl Iterator<Item = &StepExecution> {
        self.step_execution.iter().filter(|s| s.status != StepStatus::Ok)
    }
}

/// Options derived from the registry settings and the gold statement.
pub fn compare_options_for(gold_sql: &str, registry: &DatabaseRegistry) -> CompareOptions {
    let order_sensitive = match registry.settings.comparison {
        ComparisonMode::Auto => has_top_level_order_by(gold_sql),
        ComparisonMode::Multiset => false,
        ComparisonMode::Sequence => true,
    };
    CompareOptions {
        order_sensitive,
        epsilon: registry.settings.float_epsilon,
    }
}

/// Compares an already executed gold result against a candidate statement.
pub fn judge(session: &Session, gold: &ResultTable, candidate_sql: &str, opts: CompareOptions) -> Result<Verdict, ExecError> {
    match session.execute(candidate_sql) {
        Err(ExecError::Timeout(_)) => Ok(Verdict::new(VerdictDetail::FinalSqlTimeout)),
        Err(e) => {
            let mut v = Verdict::new(VerdictDetail::FinalSqlError);
            v.error = Some(e.to_string());
            Ok(v)
        }
        Ok(predicted) => {
            if compare_results(gold, &predicted, opts)? {
                Ok(Verdict::new(VerdictDetail::Match))
            } else {
                let mut v = Verdict::new(VerdictDetail::ResultMismatch);
                v.mismatch = Some(MismatchSummary {
                    gold_columns: gold.column_count,
                    gold_rows: gold.row_count(),
                    predicted_columns: predicted.column_count,
                    predicted_rows: predicted.row_count(),
                    order_sensitive: opts.order_sensitive,
                });
                Ok(v)
            }
        }
    }
}

/// Validates a rationale by executing its final SQL and the gold SQL and
/// comparing the result sets. Every sql-bearing step is also executed and
/// its outcome recorded, without affecting the label.
pub fn validate_cot(instance: &TrainInstance, cot: &CotRationale, registry: &DatabaseRegistry) -> Result<Verdict, ExecError> {
    let session = Session::open(registry, &instance.db_id)?;
    validate_cot_in(&session, instance, cot, registry)
}

pub fn validate_cot_in(session: &Session, instance: &TrainInstance, cot: &CotRationale, registry: &DatabaseRegistry) -> Result<Verdict, ExecError> {
    let gold = session
        .execute(&instance.gold_sql)
        .map_err(|e| ExecError::Gold(Box::new(e)))?;
    let opts = compare_options_for(&instance.gold_sql, registry);
    let mut verdict = judge(session, &gold, cot.final_sql(), opts)?;

    let last = cot.steps.last().map(|s| s.index);
    for (index, sql) in cot.sql_steps() {
        let status = if Some(index) == last {
            match verdict.detail {
                VerdictDetail::FinalSqlError => StepStatus::Error(verdict.error.clone().unwrap_or_default()),
                VerdictDetail::FinalSqlTimeout => StepStatus::Error(ExecError::Timeout(session.timeout).to_string()),
                _ => StepStatus::Ok,
            }
        } else {
            match session.check(sql) {
                Ok(_) => StepStatus::Ok,
                Err(e) => StepStatus::Error(e.to_string()),
            }
        };
        verdict.step_execution.push(StepExecution { index, status });
    }
    if verdict.failed_steps().next().is_some() {
        tracing::warn!(instance = %instance.instance_id, "intermediate SQL step failed to execute");
    }
    Ok(verdict)
}
