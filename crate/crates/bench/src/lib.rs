//! Deterministic inputs for the benchmarks.

use cotsql_core::execval::{ResultTable, Value};
use cotsql_core::rationale::{serialize_cot, CotRationale, CotStep};
use cotsql_core::sqllex::{vectorize, Exemplar, KeywordVocabulary, SqlVector};

const CLAUSES: [&str; 8] = [
    "WHERE a.x > 3",
    "GROUP BY a.y",
    "HAVING COUNT(*) > 1",
    "ORDER BY a.x DESC",
    "LIMIT 5",
    "JOIN b ON a.id = b.id",
    "WHERE a.z IN (SELECT z FROM c)",
    "UNION SELECT x, y FROM d",
];

/// The `i`-th query of a fixed family with varied clause mixes.
pub fn query(i: usize) -> String {
    let mut sql = String::from("SELECT a.x, SUM(a.y) FROM a");
    for (k, clause) in CLAUSES.iter().enumerate() {
        if (i >> k) & 1 == 1 || (i * 7 + k).is_multiple_of(5) {
            sql.push(' ');
            sql.push_str(clause);
        }
    }
    sql.push_str(" -- trailing WHERE in a comment");
    sql
}

pub struct Entry {
    pub id: String,
    pub vector: SqlVector,
}

impl Exemplar for Entry {
    fn instance_id(&self) -> &str {
        &self.id
    }

    fn sql_vector(&self) -> &SqlVector {
        &self.vector
    }
}

pub fn repository(n: usize, vocab: &KeywordVocabulary) -> Vec<Entry> {
    (0..n)
        .map(|i| Entry {
            id: format!("ex_{i:06}"),
            vector: vectorize(&query(i), vocab),
        })
        .collect()
}

/// `rows` rows of mixed values, and the same rows in reverse order.
pub fn tables(rows: usize) -> (ResultTable, ResultTable) {
    let data: Vec<Vec<Value>> = (0..rows)
        .map(|i| {
            vec![
                Value::Integer((i % 97) as i64),
                Value::real(i as f64 / 3.0),
                if i % 11 == 0 { Value::Null } else { Value::Text(format!("name {}", i % 13)) },
            ]
        })
        .collect();
    let mut reversed = data.clone();
    reversed.reverse();
    (ResultTable::new(3, data), ResultTable::new(3, reversed))
}

/// A rationale of `steps` steps in the canonical markdown layout.
pub fn rationale_markdown(steps: u32) -> String {
    let cot = CotRationale {
        steps: (1..=steps)
            .map(|i| CotStep {
                index: i,
                title: format!("Refine the query, part {i}"),
                prose: "Keep the rows that match and carry the columns forward.".into(),
                sql: Some(query(i as usize)),
                notes: String::new(),
            })
            .collect(),
        trailer: None,
    };
    serialize_cot(&cot).expect("generated rationale is valid")
}
